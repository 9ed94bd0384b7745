import type { Vec3, ViewRequest } from "./protocol.js";

export const MAX_ELEVATION_DEG = 89;
export const MIN_RADIUS = 1e-3;

const DEG = Math.PI / 180;

/**
 * Orbit camera: a position on a sphere around a target point, z-up.
 *
 * Elevation is clamped to [-89°, +89°] so the view direction never becomes
 * parallel to the up axis, and the radius is kept strictly positive.
 */
export class OrbitCamera {
  azimuthDeg: number;
  private _elevationDeg: number;
  private _radius: number;
  target: Vec3;
  fovDeg: number;

  constructor(opts: {
    azimuthDeg?: number;
    elevationDeg?: number;
    radius?: number;
    target?: Vec3;
    fovDeg?: number;
  } = {}) {
    this.azimuthDeg = opts.azimuthDeg ?? 0;
    this._elevationDeg = 0;
    this.elevationDeg = opts.elevationDeg ?? 0;
    this._radius = MIN_RADIUS;
    this.radius = opts.radius ?? 2.5;
    this.target = opts.target ?? [0, 0, 0];
    this.fovDeg = opts.fovDeg ?? 40;
  }

  get elevationDeg(): number {
    return this._elevationDeg;
  }

  set elevationDeg(value: number) {
    this._elevationDeg = Math.min(MAX_ELEVATION_DEG, Math.max(-MAX_ELEVATION_DEG, value));
  }

  get radius(): number {
    return this._radius;
  }

  set radius(value: number) {
    this._radius = Math.max(MIN_RADIUS, value);
  }

  /** Rotate by deltas in degrees; elevation stays clamped. */
  rotate(dAzimuthDeg: number, dElevationDeg: number): void {
    this.azimuthDeg += dAzimuthDeg;
    this.elevationDeg = this._elevationDeg + dElevationDeg;
  }

  /** Multiply the radius by a factor; it stays strictly positive. */
  zoom(factor: number): void {
    if (!(factor > 0)) throw new Error("zoom factor must be positive");
    this.radius = this._radius * factor;
  }

  get position(): Vec3 {
    const az = this.azimuthDeg * DEG;
    const el = this._elevationDeg * DEG;
    const c = Math.cos(el);
    return [
      this.target[0] + this._radius * c * Math.cos(az),
      this.target[1] + this._radius * c * Math.sin(az),
      this.target[2] + this._radius * Math.sin(el),
    ];
  }

  get up(): Vec3 {
    return [0, 0, 1];
  }

  toViewRequest(frame: number, width: number, height: number): ViewRequest {
    return {
      type: "view",
      frame,
      position: this.position,
      target: [...this.target] as Vec3,
      up: this.up,
      fov_deg: this.fovDeg,
      width,
      height,
    };
  }
}

/** Frame scrubber: an integer frame index clamped to [0, frameCount). */
export class FrameScrubber {
  readonly frameCount: number;
  private _index = 0;

  constructor(frameCount: number) {
    if (!Number.isInteger(frameCount) || frameCount < 1) {
      throw new Error("frameCount must be a positive integer");
    }
    this.frameCount = frameCount;
  }

  get index(): number {
    return this._index;
  }

  set index(value: number) {
    const i = Math.round(value);
    this._index = Math.min(this.frameCount - 1, Math.max(0, i));
  }

  step(delta: number): number {
    this.index = this._index + delta;
    return this._index;
  }
}
