/** Timeline geometry: frame index <-> horizontal pixel, plus marker layout.
 * Pure math so the scrubber can be tested without a DOM. */

export interface TimelineLayout {
  widthPx: number
  frameCount: number
}

export interface TimelineMarker {
  frame: number
  xPx: number
  kind: 'keyframe' | 'suggestion' | 'cursor'
}

export function frameToX(layout: TimelineLayout, frame: number): number {
  if (layout.frameCount <= 1) return 0
  return (frame / (layout.frameCount - 1)) * layout.widthPx
}

export function xToFrame(layout: TimelineLayout, x: number): number {
  if (layout.frameCount <= 1) return 0
  const frame = Math.round((x / layout.widthPx) * (layout.frameCount - 1))
  return Math.min(layout.frameCount - 1, Math.max(0, frame))
}

export function timelineMarkers(
  layout: TimelineLayout,
  keyframes: Iterable<number>,
  suggestion: number | null,
  currentFrame: number,
): TimelineMarker[] {
  const markers: TimelineMarker[] = []
  for (const f of keyframes) {
    markers.push({ frame: f, xPx: frameToX(layout, f), kind: 'keyframe' })
  }
  if (suggestion !== null) {
    markers.push({ frame: suggestion, xPx: frameToX(layout, suggestion), kind: 'suggestion' })
  }
  markers.push({ frame: currentFrame, xPx: frameToX(layout, currentFrame), kind: 'cursor' })
  return markers
}
