/** Invertible scene-unit <-> pixel transform with pan and zoom.
 *
 * Scene y grows upward, canvas y grows downward; the transform flips it.
 */

export interface Viewport {
  scale: number; // pixels per scene unit
  centerX: number; // scene coords at the canvas center
  centerY: number;
  width: number; // canvas pixels
  height: number;
}

export function makeViewport(width: number, height: number, scale = 24): Viewport {
  return { scale, centerX: 0, centerY: 0, width, height };
}

export function toPixel(vp: Viewport, x: number, y: number): [number, number] {
  return [
    vp.width / 2 + (x - vp.centerX) * vp.scale,
    vp.height / 2 - (y - vp.centerY) * vp.scale,
  ];
}

export function toScene(vp: Viewport, px: number, py: number): [number, number] {
  return [
    vp.centerX + (px - vp.width / 2) / vp.scale,
    vp.centerY - (py - vp.height / 2) / vp.scale,
  ];
}

export function pan(vp: Viewport, dxPixels: number, dyPixels: number): Viewport {
  return {
    ...vp,
    centerX: vp.centerX - dxPixels / vp.scale,
    centerY: vp.centerY + dyPixels / vp.scale,
  };
}

export function zoom(vp: Viewport, factor: number, anchorPx?: [number, number]): Viewport {
  const next = { ...vp, scale: vp.scale * factor };
  if (!anchorPx) return next;
  // keep the scene point under the anchor pixel fixed
  const [sx, sy] = toScene(vp, anchorPx[0], anchorPx[1]);
  const [nx, ny] = toScene(next, anchorPx[0], anchorPx[1]);
  next.centerX += sx - nx;
  next.centerY += sy - ny;
  return next;
}

export function sceneBounds(vp: Viewport): { minX: number; maxX: number; minY: number; maxY: number } {
  const [minX, maxY] = toScene(vp, 0, 0);
  const [maxX, minY] = toScene(vp, vp.width, vp.height);
  return { minX, maxX, minY, maxY };
}

/** Fit the viewport so all points are visible with a margin. */
export function fitToPoints(vp: Viewport, points: Array<[number, number]>, marginFrac = 0.1): Viewport {
  if (points.length === 0) return vp;
  let minX = Infinity;
  let maxX = -Infinity;
  let minY = Infinity;
  let maxY = -Infinity;
  for (const [x, y] of points) {
    minX = Math.min(minX, x);
    maxX = Math.max(maxX, x);
    minY = Math.min(minY, y);
    maxY = Math.max(maxY, y);
  }
  const spanX = Math.max(maxX - minX, 1e-6);
  const spanY = Math.max(maxY - minY, 1e-6);
  const scale = Math.min(
    vp.width / (spanX * (1 + 2 * marginFrac)),
    vp.height / (spanY * (1 + 2 * marginFrac)),
  );
  return {
    ...vp,
    scale,
    centerX: (minX + maxX) / 2,
    centerY: (minY + maxY) / 2,
  };
}
