import { FrameScrubber, OrbitCamera } from "./camera.js";
import { ViewerClient } from "./client.js";

const RENDER_WIDTH = 512;
const RENDER_HEIGHT = 512;
const FRAME_COUNT = 3;

function byId<T extends HTMLElement>(id: string): T {
  const el = document.getElementById(id);
  if (el === null) throw new Error(`missing element #${id}`);
  return el as T;
}

export function start(): void {
  const canvas = byId<HTMLCanvasElement>("view");
  const statsEl = byId<HTMLElement>("stats");
  const statusEl = byId<HTMLElement>("status");
  const scrubEl = byId<HTMLInputElement>("frame");
  const frameLabel = byId<HTMLElement>("frame-label");
  const ctx = canvas.getContext("2d");
  if (ctx === null) throw new Error("2d canvas not available");

  const camera = new OrbitCamera({ azimuthDeg: 30, elevationDeg: 10, radius: 2.5 });
  const scrubber = new FrameScrubber(FRAME_COUNT);
  scrubEl.min = "0";
  scrubEl.max = String(FRAME_COUNT - 1);
  scrubEl.value = "0";

  const url = `ws://${location.host}/ws`;
  const socket = new WebSocket(url);
  socket.binaryType = "arraybuffer";

  const client = new ViewerClient(
    { send: (data) => socket.send(data) },
    {
      onFrame: ({ payload }) => {
        const blob = new Blob([payload.slice().buffer], { type: "image/png" });
        const imageUrl = URL.createObjectURL(blob);
        const img = new Image();
        img.onload = () => {
          canvas.width = img.width;
          canvas.height = img.height;
          ctx.drawImage(img, 0, 0);
          URL.revokeObjectURL(imageUrl);
        };
        img.src = imageUrl;
      },
      onStats: (timings) => {
        const parts = Object.entries(timings)
          .map(([stage, ms]) => `${stage}: ${ms.toFixed(1)} ms`);
        statsEl.textContent = parts.join("  |  ");
      },
      onError: (message) => {
        statusEl.textContent = `server error: ${message}`;
      },
    },
  );

  const refresh = (): void => {
    statusEl.textContent = `frame ${scrubber.index}, az ${camera.azimuthDeg.toFixed(1)}°, ` +
      `el ${camera.elevationDeg.toFixed(1)}°, r ${camera.radius.toFixed(2)}`;
    client.requestView(camera.toViewRequest(scrubber.index, RENDER_WIDTH, RENDER_HEIGHT));
  };

  socket.onopen = refresh;
  socket.onmessage = (event: MessageEvent<ArrayBuffer | string>) => {
    client.handleMessage(event.data);
  };
  socket.onclose = () => {
    statusEl.textContent = "disconnected";
  };

  let dragging = false;
  canvas.addEventListener("pointerdown", (e) => {
    dragging = true;
    canvas.setPointerCapture(e.pointerId);
  });
  canvas.addEventListener("pointerup", (e) => {
    dragging = false;
    canvas.releasePointerCapture(e.pointerId);
  });
  canvas.addEventListener("pointermove", (e) => {
    if (!dragging) return;
    camera.rotate(-e.movementX * 0.4, e.movementY * 0.4);
    refresh();
  });
  canvas.addEventListener("wheel", (e) => {
    e.preventDefault();
    camera.zoom(e.deltaY > 0 ? 1.1 : 1 / 1.1);
    refresh();
  }, { passive: false });

  scrubEl.addEventListener("input", () => {
    scrubber.index = Number(scrubEl.value);
    frameLabel.textContent = String(scrubber.index);
    refresh();
  });
}

if (typeof document !== "undefined" && document.getElementById("view") !== null) {
  start();
}
