/**
 * Wire protocol for the avatar render websocket.
 *
 * The client sends JSON view requests. For each request that the server can
 * parse as JSON it answers, in order, with one binary frame and one JSON
 * stats message (or a single JSON error message instead). The binary frame
 * starts with a 16-byte little-endian header:
 *
 *   bytes 0..4   magic "DUTR"
 *   bytes 4..8   u32 request counter (position of the request in the
 *                connection's receive order, starting at 1)
 *   bytes 8..12  u32 payload byte length
 *   bytes 12..16 u32 reserved, always 0
 *
 * followed by a PNG payload of exactly the stated length.
 */

export const FRAME_MAGIC = "DUTR";
export const FRAME_HEADER_BYTES = 16;

export type Vec3 = [number, number, number];

export interface ViewRequest {
  type: "view";
  frame: number;
  position: Vec3;
  target: Vec3;
  up: Vec3;
  fov_deg: number;
  width: number;
  height: number;
}

export interface FrameMessage {
  counter: number;
  /** PNG-encoded image bytes. */
  payload: Uint8Array;
}

export interface StatsMessage {
  type: "stats";
  timings_ms: Record<string, number>;
}

export interface ErrorMessage {
  type: "error";
  message: string;
}

export type ServerTextMessage = StatsMessage | ErrorMessage;

export function encodeViewRequest(req: ViewRequest): string {
  return JSON.stringify(req);
}

/** Decode a binary frame, validating the header against the payload. */
export function decodeFrame(buffer: ArrayBuffer): FrameMessage {
  if (buffer.byteLength < FRAME_HEADER_BYTES) {
    throw new Error(`frame shorter than header: ${buffer.byteLength} bytes`);
  }
  const view = new DataView(buffer);
  const magic = String.fromCharCode(
    view.getUint8(0), view.getUint8(1), view.getUint8(2), view.getUint8(3),
  );
  if (magic !== FRAME_MAGIC) {
    throw new Error(`bad frame magic: ${JSON.stringify(magic)}`);
  }
  const counter = view.getUint32(4, true);
  const length = view.getUint32(8, true);
  const reserved = view.getUint32(12, true);
  if (reserved !== 0) {
    throw new Error(`reserved header field must be 0, got ${reserved}`);
  }
  if (buffer.byteLength !== FRAME_HEADER_BYTES + length) {
    throw new Error(
      `payload length mismatch: header says ${length}, ` +
      `got ${buffer.byteLength - FRAME_HEADER_BYTES}`,
    );
  }
  return { counter, payload: new Uint8Array(buffer, FRAME_HEADER_BYTES, length) };
}

/** Encode a frame (used by tests and tooling that fake the server). */
export function encodeFrame(counter: number, payload: Uint8Array): ArrayBuffer {
  const buffer = new ArrayBuffer(FRAME_HEADER_BYTES + payload.byteLength);
  const view = new DataView(buffer);
  for (let i = 0; i < 4; i++) view.setUint8(i, FRAME_MAGIC.charCodeAt(i));
  view.setUint32(4, counter, true);
  view.setUint32(8, payload.byteLength, true);
  view.setUint32(12, 0, true);
  new Uint8Array(buffer, FRAME_HEADER_BYTES).set(payload);
  return buffer;
}

export function parseServerText(text: string): ServerTextMessage {
  let parsed: unknown;
  try {
    parsed = JSON.parse(text);
  } catch {
    throw new Error(`server sent non-JSON text: ${text.slice(0, 80)}`);
  }
  if (typeof parsed !== "object" || parsed === null) {
    throw new Error("server text message is not an object");
  }
  const msg = parsed as Record<string, unknown>;
  if (msg.type === "stats" && typeof msg.timings_ms === "object" && msg.timings_ms !== null) {
    return { type: "stats", timings_ms: msg.timings_ms as Record<string, number> };
  }
  if (msg.type === "error" && typeof msg.message === "string") {
    return { type: "error", message: msg.message };
  }
  throw new Error(`unrecognized server message type: ${String(msg.type)}`);
}
