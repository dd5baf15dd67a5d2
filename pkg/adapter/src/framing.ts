/**
 * Length-prefixed framing for the scorer subprocess protocol: each frame
 * is a little-endian u64 byte count followed by that many payload bytes.
 */

/** Frames above this are treated as protocol corruption, not data. */
export const MAX_FRAME_BYTES = 2 ** 32;

export function encodeFrame(payload: Buffer): Buffer {
  const header = Buffer.alloc(8);
  header.writeBigUInt64LE(BigInt(payload.length), 0);
  return Buffer.concat([header, payload]);
}

export function writeFrame(stream: NodeJS.WritableStream, payload: Buffer): void {
  stream.write(encodeFrame(payload));
}

export type FrameEvent =
  | { kind: "frame"; payload: Buffer }
  // bigint: the length must echo back exactly even beyond 2^53.
  | { kind: "oversize"; length: bigint };

/**
 * Incremental frame reassembly. Feed arbitrary chunks with push(); next()
 * yields complete frames (or an oversize report) and returns null while
 * more bytes are needed.
 */
export class FrameReader {
  private buf: Buffer = Buffer.alloc(0);

  push(chunk: Buffer): void {
    this.buf = this.buf.length ? Buffer.concat([this.buf, chunk]) : chunk;
  }

  next(): FrameEvent | null {
    if (this.buf.length < 8) {
      return null;
    }
    const length = this.buf.readBigUInt64LE(0);
    if (length > BigInt(MAX_FRAME_BYTES)) {
      return { kind: "oversize", length };
    }
    const n = Number(length);
    if (this.buf.length < 8 + n) {
      return null;
    }
    const payload = this.buf.subarray(8, 8 + n);
    this.buf = this.buf.subarray(8 + n);
    return { kind: "frame", payload };
  }

  /** Bytes sitting in the buffer (a partial frame once input ends). */
  pending(): number {
    return this.buf.length;
  }
}
