import {
  decodeFrame,
  encodeViewRequest,
  parseServerText,
  type ServerTextMessage,
  type ViewRequest,
} from "./protocol.js";

/** The slice of a websocket the client needs; tests supply a fake. */
export interface Transport {
  send(data: string): void;
}

export interface DisplayedFrame {
  counter: number;
  payload: Uint8Array;
  request: ViewRequest;
}

export interface ViewerClientHandlers {
  /** Called only for the reply to the most recent request. */
  onFrame?(frame: DisplayedFrame): void;
  onStats?(timingsMs: Record<string, number>): void;
  onError?(message: string): void;
}

/**
 * Render-request scheduler over one websocket connection.
 *
 * At most one request is in flight. While waiting, newer requests replace
 * each other so only the latest is sent when the reply arrives. Each binary
 * frame echoes a counter equal to the request's position in the server's
 * receive order; since this client only ever sends well-formed requests,
 * that order matches the send order, and any frame whose counter is not the
 * newest sent request is dropped as stale instead of displayed.
 */
export class ViewerClient {
  private readonly transport: Transport;
  private readonly handlers: ViewerClientHandlers;
  private sentCount = 0;
  private inFlight = false;
  private pending: ViewRequest | null = null;
  private byCounter = new Map<number, ViewRequest>();
  private staleDroppedCount = 0;

  constructor(transport: Transport, handlers: ViewerClientHandlers = {}) {
    this.transport = transport;
    this.handlers = handlers;
  }

  /** Number of requests sent so far on this connection. */
  get requestsSent(): number {
    return this.sentCount;
  }

  get hasRequestInFlight(): boolean {
    return this.inFlight;
  }

  /** How many server frames were dropped for being stale. */
  get staleDropped(): number {
    return this.staleDroppedCount;
  }

  /** Queue a view request; coalesces to the latest while one is in flight. */
  requestView(request: ViewRequest): void {
    if (this.inFlight) {
      this.pending = request;
      return;
    }
    this.sendNow(request);
  }

  private sendNow(request: ViewRequest): void {
    this.sentCount += 1;
    this.byCounter.set(this.sentCount, request);
    this.inFlight = true;
    this.transport.send(encodeViewRequest(request));
  }

  /** Feed every websocket message (binary or text) through this method. */
  handleMessage(data: ArrayBuffer | string): void {
    if (typeof data === "string") {
      this.handleText(parseServerText(data));
    } else {
      this.handleBinary(data);
    }
  }

  private handleBinary(buffer: ArrayBuffer): void {
    const frame = decodeFrame(buffer);
    const request = this.byCounter.get(frame.counter);
    this.byCounter.delete(frame.counter);
    if (frame.counter !== this.sentCount || request === undefined) {
      this.staleDroppedCount += 1;
      return;
    }
    this.handlers.onFrame?.({ counter: frame.counter, payload: frame.payload, request });
  }

  private handleText(msg: ServerTextMessage): void {
    // stats or error terminates the current exchange either way
    this.inFlight = false;
    if (msg.type === "stats") {
      this.handlers.onStats?.(msg.timings_ms);
    } else {
      this.handlers.onError?.(msg.message);
    }
    if (this.pending !== null) {
      const next = this.pending;
      this.pending = null;
      this.sendNow(next);
    }
  }
}
