import { screenToImage, type ViewTransform } from './transform.js'
import type { Box, Point } from './types.js'

/** Accumulates a pointer drag into a box in image coordinates.
 *
 * Corners are converted through the view transform as they arrive, so the
 * resulting box is independent of zoom and pan. Sub-pixel boxes are kept
 * as-is; only degenerate drags (under half a pixel) are rejected.
 */
export class DrawGesture {
  private start: Point
  private current: Point

  constructor(screenPoint: Point, private readonly transform: ViewTransform) {
    this.start = screenToImage(transform, screenPoint)
    this.current = this.start
  }

  update(screenPoint: Point): void {
    this.current = screenToImage(this.transform, screenPoint)
  }

  /** Box spanned so far, normalized to positive width/height. */
  preview(): Box {
    const x = Math.min(this.start.x, this.current.x)
    const y = Math.min(this.start.y, this.current.y)
    return {
      x,
      y,
      w: Math.abs(this.current.x - this.start.x),
      h: Math.abs(this.current.y - this.start.y),
    }
  }

  /** Final box, or null when the drag is too small to mean anything. */
  finish(screenPoint: Point): Box | null {
    this.update(screenPoint)
    const box = this.preview()
    if (box.w < 0.5 || box.h < 0.5) return null
    return box
  }
}
