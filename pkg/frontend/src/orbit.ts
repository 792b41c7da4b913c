import type { CameraPoseDict } from "./types.js";

/** Orbit camera: spherical coordinates around a target point. */
export interface OrbitCamera {
  azimuthDeg: number;
  elevationDeg: number; // clamped strictly inside (-90, 90)
  radius: number; // > 0
  target: [number, number, number];
}

const ELEVATION_LIMIT = 89.9;
const MIN_RADIUS = 0.05;

export function clampOrbit(orbit: OrbitCamera): OrbitCamera {
  return {
    azimuthDeg: ((orbit.azimuthDeg % 360) + 360) % 360,
    elevationDeg: Math.max(-ELEVATION_LIMIT, Math.min(ELEVATION_LIMIT, orbit.elevationDeg)),
    radius: Math.max(MIN_RADIUS, orbit.radius),
    target: orbit.target,
  };
}

export function orbitBy(orbit: OrbitCamera, dAzimuth: number, dElevation: number): OrbitCamera {
  return clampOrbit({
    ...orbit,
    azimuthDeg: orbit.azimuthDeg + dAzimuth,
    elevationDeg: orbit.elevationDeg + dElevation,
  });
}

export function zoomBy(orbit: OrbitCamera, factor: number): OrbitCamera {
  return clampOrbit({ ...orbit, radius: orbit.radius * factor });
}

/**
 * Camera pose for the wire format. Azimuth 0 / elevation 0 places the camera
 * on the -z side of the target looking along +z, matching the scene
 * generator's default cameras; azimuth rotates about the world up axis.
 */
export function orbitToPose(
  orbit: OrbitCamera,
  width: number,
  height: number,
  fovYDeg = 42.0
): CameraPoseDict {
  const o = clampOrbit(orbit);
  const az = (o.azimuthDeg * Math.PI) / 180;
  const el = (o.elevationDeg * Math.PI) / 180;
  const [tx, ty, tz] = o.target;
  return {
    position: [
      tx + o.radius * Math.cos(el) * Math.sin(az),
      ty + o.radius * Math.sin(el),
      tz - o.radius * Math.cos(el) * Math.cos(az),
    ],
    look_at: [tx, ty, tz],
    up: [0, 1, 0],
    fov_y_deg: fovYDeg,
    width,
    height,
  };
}
