import type { Point } from './types.js'

/** Zoom/pan mapping between image pixels and screen pixels.
 *
 * screen = image * zoom + pan. Pure data so every state change produces a
 * fresh transform; both directions are exact inverses of each other up to
 * floating point.
 */
export interface ViewTransform {
  zoom: number
  panX: number
  panY: number
}

export const identityTransform: ViewTransform = { zoom: 1, panX: 0, panY: 0 }

export function imageToScreen(t: ViewTransform, p: Point): Point {
  return { x: p.x * t.zoom + t.panX, y: p.y * t.zoom + t.panY }
}

export function screenToImage(t: ViewTransform, p: Point): Point {
  return { x: (p.x - t.panX) / t.zoom, y: (p.y - t.panY) / t.zoom }
}

/** Rescale around a fixed screen point (the cursor) so it stays put. */
export function zoomAround(t: ViewTransform, factor: number, pivot: Point): ViewTransform {
  const zoom = clampZoom(t.zoom * factor)
  const applied = zoom / t.zoom
  return {
    zoom,
    panX: pivot.x - (pivot.x - t.panX) * applied,
    panY: pivot.y - (pivot.y - t.panY) * applied,
  }
}

export function pan(t: ViewTransform, dx: number, dy: number): ViewTransform {
  return { ...t, panX: t.panX + dx, panY: t.panY + dy }
}

function clampZoom(zoom: number): number {
  return Math.min(16, Math.max(0.125, zoom))
}
