import { imageToScreen, type ViewTransform } from './transform.js'
import type { Box, TrackEntry } from './types.js'

/** Declarative draw list: computed by pure functions, applied to a canvas by
 * `paintOverlay`. Tests assert on the ops instead of rasterized pixels. */
export interface BoxOp {
  kind: 'track-box' | 'keyframe-box' | 'draft-box'
  frame: number
  rect: { x: number; y: number; w: number; h: number } // screen coords
  confidence: number
}

export interface OverlayToggles {
  showInterpolated: boolean
  showConfidence: boolean
}

export const defaultToggles: OverlayToggles = { showInterpolated: true, showConfidence: false }

export function boxToScreenRect(t: ViewTransform, box: Box) {
  const tl = imageToScreen(t, { x: box.x, y: box.y })
  return { x: tl.x, y: tl.y, w: box.w * t.zoom, h: box.h * t.zoom }
}

/** Ops for the entries of the visible range; the current frame's box is always
 * first so it paints underneath nothing. */
export function overlayOps(
  entries: TrackEntry[],
  transform: ViewTransform,
  toggles: OverlayToggles = defaultToggles,
  draft: Box | null = null,
): BoxOp[] {
  const ops: BoxOp[] = []
  for (const e of entries) {
    const human = e.provenance === 'human'
    if (!human && !toggles.showInterpolated) continue
    ops.push({
      kind: human ? 'keyframe-box' : 'track-box',
      frame: e.frame,
      rect: boxToScreenRect(transform, e),
      confidence: e.confidence,
    })
  }
  if (draft) {
    ops.push({ kind: 'draft-box', frame: -1, rect: boxToScreenRect(transform, draft), confidence: 1 })
  }
  return ops
}

const STYLE: Record<BoxOp['kind'], string> = {
  'track-box': '#4dc3ff',
  'keyframe-box': '#ffd24d',
  'draft-box': '#ff5d5d',
}

export function paintOverlay(ctx: CanvasRenderingContext2D, ops: BoxOp[], toggles: OverlayToggles): void {
  for (const op of ops) {
    ctx.save()
    ctx.strokeStyle = STYLE[op.kind]
    ctx.lineWidth = op.kind === 'keyframe-box' ? 2.5 : 1.5
    if (op.kind === 'draft-box') ctx.setLineDash([6, 4])
    if (toggles.showConfidence && op.kind === 'track-box') {
      ctx.globalAlpha = 0.35 + 0.65 * Math.min(1, op.confidence * 20)
    }
    ctx.strokeRect(op.rect.x, op.rect.y, op.rect.w, op.rect.h)
    ctx.restore()
  }
}
