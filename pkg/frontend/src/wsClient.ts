/**
 * Browser client for the editing protocol over a native WebSocket.
 *
 * The server answers strictly in request order on a connection, so a FIFO
 * of pending resolvers pairs replies with requests.
 */

import { ClientMessage, ServerMessage, validateClientMessage, validateServerMessage } from "./protocol.js";

export class EditorConnection {
  private ws: WebSocket;
  private pending: Array<(msg: ServerMessage) => void> = [];
  onStatus: (status: "connected" | "disconnected" | "error") => void = () => {};

  private constructor(ws: WebSocket) {
    this.ws = ws;
  }

  static connect(url: string): Promise<EditorConnection> {
    return new Promise((resolve, reject) => {
      const ws = new WebSocket(url);
      const conn = new EditorConnection(ws);
      ws.onopen = () => {
        conn.onStatus("connected");
        resolve(conn);
      };
      ws.onerror = () => {
        conn.onStatus("error");
        reject(new Error(`cannot reach ${url}`));
      };
      ws.onclose = () => {
        conn.onStatus("disconnected");
        conn.pending.splice(0).forEach((r) =>
          r({ type: "error", code: "disconnected", reason: "connection closed" }),
        );
      };
      ws.onmessage = (event) => {
        const next = conn.pending.shift();
        if (!next) return;
        try {
          next(validateServerMessage(JSON.parse(String(event.data))));
        } catch (exc) {
          next({ type: "error", code: "bad_reply", reason: String(exc) });
        }
      };
    });
  }

  request(message: ClientMessage): Promise<ServerMessage> {
    validateClientMessage(message);
    return new Promise((resolve) => {
      this.pending.push(resolve);
      this.ws.send(JSON.stringify(message));
    });
  }

  close(): void {
    this.ws.close();
  }
}
