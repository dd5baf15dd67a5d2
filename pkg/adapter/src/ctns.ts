/**
 * CTNS tensor codec, bit-exact with the pipeline's reader and writer.
 *
 * Layout: magic "CTNS", five little-endian u32 fields (version=1, height,
 * width, channels, scale_factor), then height*width*channels little-endian
 * float32 values in row-major (row, col, channel) order.
 *
 * Error frames on the scorer protocol use magic "CERR" followed by a
 * little-endian u32 byte count and a UTF-8 message.
 */

export const CTNS_VERSION = 1;
const MAGIC = Buffer.from("CTNS", "ascii");
const ERROR_MAGIC = Buffer.from("CERR", "ascii");
const HEADER_BYTES = 4 + 5 * 4;

export interface Ctns {
  height: number;
  width: number;
  channels: number;
  scaleFactor: number;
  /** Row-major (row, col, channel); length = height*width*channels. */
  data: Float32Array;
}

export function encodeCtns(t: Ctns): Buffer {
  const { height, width, channels, scaleFactor, data } = t;
  if (data.length !== height * width * channels) {
    throw new Error(
      `data length ${data.length} != ${height}x${width}x${channels}`);
  }
  const buf = Buffer.alloc(HEADER_BYTES + 4 * data.length);
  MAGIC.copy(buf, 0);
  buf.writeUInt32LE(CTNS_VERSION, 4);
  buf.writeUInt32LE(height, 8);
  buf.writeUInt32LE(width, 12);
  buf.writeUInt32LE(channels, 16);
  buf.writeUInt32LE(scaleFactor, 20);
  // Float32Array is native-endian; every platform this runs on is
  // little-endian, matching the on-disk format without a swap pass.
  Buffer.from(data.buffer, data.byteOffset, data.byteLength)
    .copy(buf, HEADER_BYTES);
  return buf;
}

export function decodeCtns(blob: Buffer): Ctns {
  if (blob.length < HEADER_BYTES) {
    throw new Error("truncated CTNS header");
  }
  if (!blob.subarray(0, 4).equals(MAGIC)) {
    throw new Error(`bad CTNS magic: ${JSON.stringify(blob.subarray(0, 4).toString("latin1"))}`);
  }
  const version = blob.readUInt32LE(4);
  if (version !== CTNS_VERSION) {
    throw new Error(`unsupported CTNS version: ${version}`);
  }
  const height = blob.readUInt32LE(8);
  const width = blob.readUInt32LE(12);
  const channels = blob.readUInt32LE(16);
  const scaleFactor = blob.readUInt32LE(20);
  const expected = HEADER_BYTES + 4 * height * width * channels;
  if (blob.length !== expected) {
    throw new Error(`CTNS payload length ${blob.length} != expected ${expected}`);
  }
  // Copy out of the Buffer so the result owns aligned memory.
  const bytes = new Uint8Array(expected - HEADER_BYTES);
  bytes.set(blob.subarray(HEADER_BYTES));
  return { height, width, channels, scaleFactor, data: new Float32Array(bytes.buffer) };
}

export function encodeErrorFrame(message: string): Buffer {
  const msg = Buffer.from(message, "utf-8");
  const buf = Buffer.alloc(8 + msg.length);
  ERROR_MAGIC.copy(buf, 0);
  buf.writeUInt32LE(msg.length, 4);
  msg.copy(buf, 8);
  return buf;
}

/** The error message if the payload is an error frame, else null. */
export function decodeErrorFrame(payload: Buffer): string | null {
  if (payload.length < 8 || !payload.subarray(0, 4).equals(ERROR_MAGIC)) {
    return null;
  }
  const n = payload.readUInt32LE(4);
  return payload.subarray(8, 8 + n).toString("utf-8");
}
