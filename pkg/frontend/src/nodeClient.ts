/**
 * Node-side protocol client used by the test suite (node 20 has no stable
 * built-in WebSocket client). Speaks the same RFC 6455 framing the browser
 * uses natively, and records a full message trace like the UI store audit.
 */

import { createHash, randomBytes } from "node:crypto";
import { Socket, createConnection } from "node:net";

import { ClientMessage, ServerMessage, validateClientMessage, validateServerMessage } from "./protocol.js";

const WS_GUID = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11";

function encodeFrame(payload: Buffer, opcode = 0x1): Buffer {
  const mask = randomBytes(4);
  let header: Buffer;
  if (payload.length < 126) {
    header = Buffer.from([0x80 | opcode, 0x80 | payload.length]);
  } else if (payload.length < 1 << 16) {
    header = Buffer.alloc(4);
    header[0] = 0x80 | opcode;
    header[1] = 0x80 | 126;
    header.writeUInt16BE(payload.length, 2);
  } else {
    header = Buffer.alloc(10);
    header[0] = 0x80 | opcode;
    header[1] = 0x80 | 127;
    header.writeBigUInt64BE(BigInt(payload.length), 2);
  }
  const masked = Buffer.from(payload);
  for (let i = 0; i < masked.length; i++) masked[i] ^= mask[i % 4];
  return Buffer.concat([header, mask, masked]);
}

class FrameParser {
  private buf = Buffer.alloc(0);

  push(chunk: Buffer): Array<{ opcode: number; payload: Buffer }> {
    this.buf = Buffer.concat([this.buf, chunk]);
    const frames: Array<{ opcode: number; payload: Buffer }> = [];
    for (;;) {
      if (this.buf.length < 2) break;
      const opcode = this.buf[0] & 0x0f;
      const masked = (this.buf[1] & 0x80) !== 0;
      let len = this.buf[1] & 0x7f;
      let offset = 2;
      if (len === 126) {
        if (this.buf.length < 4) break;
        len = this.buf.readUInt16BE(2);
        offset = 4;
      } else if (len === 127) {
        if (this.buf.length < 10) break;
        len = Number(this.buf.readBigUInt64BE(2));
        offset = 10;
      }
      const maskLen = masked ? 4 : 0;
      if (this.buf.length < offset + maskLen + len) break;
      let payload = this.buf.subarray(offset + maskLen, offset + maskLen + len);
      if (masked) {
        const key = this.buf.subarray(offset, offset + 4);
        payload = Buffer.from(payload);
        for (let i = 0; i < payload.length; i++) payload[i] ^= key[i % 4];
      }
      frames.push({ opcode, payload: Buffer.from(payload) });
      this.buf = this.buf.subarray(offset + maskLen + len);
    }
    return frames;
  }
}

export interface TraceEntry {
  direction: "sent" | "received";
  message: ClientMessage | ServerMessage;
}

export class NodeEditorClient {
  readonly trace: TraceEntry[] = [];
  private socket: Socket;
  private parser = new FrameParser();
  private waiters: Array<(msg: ServerMessage) => void> = [];

  private constructor(socket: Socket) {
    this.socket = socket;
  }

  static async connect(host: string, port: number): Promise<NodeEditorClient> {
    const socket = createConnection({ host, port });
    await new Promise<void>((resolve, reject) => {
      socket.once("connect", resolve);
      socket.once("error", reject);
    });
    const key = randomBytes(16).toString("base64");
    socket.write(
      `GET /ws HTTP/1.1\r\nHost: ${host}:${port}\r\nUpgrade: websocket\r\n` +
        `Connection: Upgrade\r\nSec-WebSocket-Key: ${key}\r\nSec-WebSocket-Version: 13\r\n\r\n`,
    );
    const client = new NodeEditorClient(socket);
    const expected = createHash("sha1").update(key + WS_GUID).digest("base64");
    await new Promise<void>((resolve, reject) => {
      let header = Buffer.alloc(0);
      const onData = (chunk: Buffer) => {
        header = Buffer.concat([header, chunk]);
        const end = header.indexOf("\r\n\r\n");
        if (end < 0) return;
        socket.off("data", onData);
        const head = header.subarray(0, end).toString("latin1");
        if (!head.includes("101") || !head.includes(expected)) {
          reject(new Error(`handshake refused: ${head.split("\r\n")[0]}`));
          return;
        }
        client.attach();
        const rest = header.subarray(end + 4);
        if (rest.length) client.onData(rest);
        resolve();
      };
      socket.on("data", onData);
      socket.once("error", reject);
    });
    return client;
  }

  private attach(): void {
    this.socket.on("data", (chunk: Buffer) => this.onData(chunk));
  }

  private onData(chunk: Buffer): void {
    for (const frame of this.parser.push(chunk)) {
      if (frame.opcode === 0x9) {
        this.socket.write(encodeFrame(frame.payload, 0xa));
        continue;
      }
      if (frame.opcode !== 0x1) continue;
      const msg = validateServerMessage(JSON.parse(frame.payload.toString("utf8")));
      this.trace.push({ direction: "received", message: msg });
      const waiter = this.waiters.shift();
      if (waiter) waiter(msg);
    }
  }

  request(message: ClientMessage): Promise<ServerMessage> {
    validateClientMessage(message);
    this.trace.push({ direction: "sent", message });
    const promise = new Promise<ServerMessage>((resolve) => this.waiters.push(resolve));
    this.socket.write(encodeFrame(Buffer.from(JSON.stringify(message))));
    return promise;
  }

  close(): void {
    this.socket.write(encodeFrame(Buffer.alloc(0), 0x8));
    this.socket.end();
  }
}
