import { describe, expect, it } from "vitest";

import { ViewerClient, type DisplayedFrame } from "../src/client.js";
import { encodeFrame, type ViewRequest } from "../src/protocol.js";

function viewRequest(frame: number, azTag: number): ViewRequest {
  return {
    type: "view",
    frame,
    position: [2, azTag, 0.5],
    target: [0, 0, 0],
    up: [0, 0, 1],
    fov_deg: 40,
    width: 64,
    height: 64,
  };
}

/** Captures outgoing request texts like the server would receive them. */
class FakeTransport {
  sent: ViewRequest[] = [];
  send(data: string): void {
    this.sent.push(JSON.parse(data) as ViewRequest);
  }
}

function statsText(): string {
  return JSON.stringify({ type: "stats", timings_ms: { render: 1.0, total: 1.0 } });
}

function setup() {
  const transport = new FakeTransport();
  const displayed: DisplayedFrame[] = [];
  const errors: string[] = [];
  const stats: Record<string, number>[] = [];
  const client = new ViewerClient(transport, {
    onFrame: (f) => displayed.push(f),
    onError: (m) => errors.push(m),
    onStats: (t) => stats.push(t),
  });
  return { transport, client, displayed, errors, stats };
}

/** Answer the nth sent request (1-based counter) with a one-byte payload. */
function reply(client: ViewerClient, counter: number): void {
  client.handleMessage(encodeFrame(counter, new Uint8Array([counter])));
  client.handleMessage(statsText());
}

describe("ViewerClient", () => {
  it("completes a simple request/response exchange", () => {
    const { transport, client, displayed, stats } = setup();
    client.requestView(viewRequest(0, 1));
    expect(transport.sent).toHaveLength(1);
    expect(client.hasRequestInFlight).toBe(true);
    reply(client, 1);
    expect(client.hasRequestInFlight).toBe(false);
    expect(displayed).toHaveLength(1);
    expect(displayed[0].counter).toBe(1);
    expect(displayed[0].request.frame).toBe(0);
    expect(stats).toEqual([{ render: 1.0, total: 1.0 }]);
  });

  it("keeps at most one request in flight and coalesces to the latest", () => {
    const { transport, client, displayed } = setup();
    client.requestView(viewRequest(0, 1));
    client.requestView(viewRequest(1, 2)); // queued
    client.requestView(viewRequest(2, 3)); // replaces the queued one
    expect(transport.sent).toHaveLength(1);

    reply(client, 1);
    // completing the first exchange releases exactly the latest pending request
    expect(transport.sent).toHaveLength(2);
    expect(transport.sent[1].frame).toBe(2);

    reply(client, 2);
    expect(transport.sent).toHaveLength(2);
    expect(displayed.map((f) => f.request.frame)).toEqual([0, 2]);
  });

  it("drops stale frames so only the newest request's reply is displayed", () => {
    const { client, displayed } = setup();
    // simulate a server that queued several replies: send 3 requests by
    // letting each exchange complete with only the stats message first
    client.requestView(viewRequest(0, 1));
    client.handleMessage(statsText()); // frame for #1 still "in the pipe"
    client.requestView(viewRequest(1, 2));
    client.handleMessage(statsText());
    client.requestView(viewRequest(2, 3));
    expect(client.requestsSent).toBe(3);

    // late frames for the first two requests arrive now, then the fresh one
    client.handleMessage(encodeFrame(1, new Uint8Array([1])));
    client.handleMessage(encodeFrame(2, new Uint8Array([2])));
    client.handleMessage(encodeFrame(3, new Uint8Array([3])));
    client.handleMessage(statsText());

    expect(client.staleDropped).toBe(2);
    expect(displayed).toHaveLength(1);
    expect(displayed[0].counter).toBe(3);
    expect(Array.from(displayed[0].payload)).toEqual([3]);
  });

  it("treats a rapid burst like the protocol's stale-drop scenario", () => {
    const { transport, client, displayed } = setup();
    for (let i = 0; i < 10; i++) {
      client.requestView(viewRequest(i % 3, i));
    }
    // one in flight + the coalesced latest
    expect(transport.sent).toHaveLength(1);
    reply(client, 1);
    reply(client, 2);
    expect(transport.sent).toHaveLength(2);
    expect(transport.sent[1].position[1]).toBe(9); // the 10th request survived
    expect(displayed.at(-1)?.request.position[1]).toBe(9);
  });

  it("recovers after a server error and sends the pending request", () => {
    const { transport, client, displayed, errors } = setup();
    client.requestView(viewRequest(99, 1)); // server will reject this frame
    client.requestView(viewRequest(1, 2));
    client.handleMessage(JSON.stringify({ type: "error", message: "frame index 99 out of range" }));
    expect(errors).toEqual(["frame index 99 out of range"]);
    // error ends the exchange; the pending request goes out with counter 2
    expect(transport.sent).toHaveLength(2);
    reply(client, 2);
    expect(displayed).toHaveLength(1);
    expect(displayed[0].counter).toBe(2);
  });

  it("ignores frames whose counter was never sent", () => {
    const { client, displayed } = setup();
    client.requestView(viewRequest(0, 1));
    client.handleMessage(encodeFrame(42, new Uint8Array([7])));
    expect(displayed).toHaveLength(0);
    expect(client.staleDropped).toBe(1);
  });
});
