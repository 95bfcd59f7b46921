/**
 * Timeline control logic: keyframe capture times, scrubbing, playback
 * stepping, and export gating. Pure state so it is unit-testable; the DOM
 * layer translates these into protocol requests.
 */

export class Timeline {
  times: number[] = [];
  position = 0;
  playing = false;

  get canExport(): boolean {
    return this.times.length >= 2;
  }

  get span(): [number, number] | null {
    return this.times.length >= 2 ? [this.times[0], this.times[this.times.length - 1]] : null;
  }

  nextCaptureTime(): number {
    return this.times.length === 0 ? 0 : this.times[this.times.length - 1] + 1;
  }

  recordCaptured(times: number[]): void {
    this.times = [...times];
    this.position = this.times[this.times.length - 1];
  }

  /** Clamp a scrub target into the captured range; null when not scrubbable. */
  scrubTarget(fraction: number): number | null {
    const span = this.span;
    if (!span) return null;
    const t = span[0] + (span[1] - span[0]) * Math.min(1, Math.max(0, fraction));
    this.position = t;
    return t;
  }

  /** Advance playback; returns the new time or null when finished. */
  step(dt: number): number | null {
    const span = this.span;
    if (!span || !this.playing) return null;
    const next = this.position + dt;
    if (next >= span[1]) {
      this.position = span[1];
      this.playing = false;
      return span[1];
    }
    this.position = next;
    return next;
  }
}
