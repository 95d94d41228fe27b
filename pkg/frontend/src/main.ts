/** Browser entry point: wires canvas, timeline, and keyboard to a session.
 * All geometry and state logic lives in the imported modules; this file only
 * touches the DOM. */

import { ApiClient } from './api.js'
import { DrawGesture } from './draw.js'
import { defaultToggles, overlayOps, paintOverlay } from './overlay.js'
import { ClientSession } from './session.js'
import { timelineMarkers, xToFrame, type TimelineLayout } from './timeline.js'
import { pan, zoomAround } from './transform.js'
import type { Box } from './types.js'

const qs = new URLSearchParams(location.search)
const apiBase = qs.get('api') ?? 'http://127.0.0.1:8008'
const api = new ApiClient(apiBase)

const frameCanvas = document.getElementById('frame') as HTMLCanvasElement
const timelineEl = document.getElementById('timeline') as HTMLCanvasElement
const statusEl = document.getElementById('status') as HTMLElement
const ctx = frameCanvas.getContext('2d')!
const tctx = timelineEl.getContext('2d')!

let session: ClientSession | null = null
let gesture: DrawGesture | null = null
let draft: Box | null = null
const frameImage = new Image()

function status(text: string) {
  statusEl.textContent = text
}

async function boot() {
  const framesDir = qs.get('frames')
  if (!framesDir) {
    status('add ?frames=/abs/path/to/frames (and optionally &api=http://host:port) to the URL')
    return
  }
  const video = await api.registerVideo(framesDir)
  session = new ClientSession(api, video, qs.get('object') ?? 'obj-1')
  status('drag a box on the first frame to start')
  render()
}

function render() {
  if (!session) return
  const s = session
  frameImage.onload = () => {
    ctx.clearRect(0, 0, frameCanvas.width, frameCanvas.height)
    const t = s.view.transform
    ctx.save()
    ctx.setTransform(t.zoom, 0, 0, t.zoom, t.panX, t.panY)
    ctx.drawImage(frameImage, 0, 0)
    ctx.restore()
    const entries = s.id() ? s.entriesInRange(s.view.frame, s.view.frame) : []
    paintOverlay(ctx, overlayOps(entries, t, defaultToggles, draft), defaultToggles)
    renderTimeline()
    const parts = [`frame ${s.view.frame}/${s.video.frame_count - 1}`]
    if (s.view.suggestion !== null) parts.push(`suggested next: ${s.view.suggestion} (press g)`)
    if (s.view.banner) parts.push(`⚠ ${s.view.banner}`)
    status(parts.join(' — '))
  }
  frameImage.src = api.frameUrl(s.video.video_id, s.view.frame)
}

function renderTimeline() {
  if (!session) return
  const layout: TimelineLayout = { widthPx: timelineEl.width, frameCount: session.video.frame_count }
  tctx.clearRect(0, 0, timelineEl.width, timelineEl.height)
  tctx.fillStyle = '#333'
  tctx.fillRect(0, timelineEl.height / 2 - 1, timelineEl.width, 2)
  for (const m of timelineMarkers(layout, session.keyframeList(), session.view.suggestion, session.view.frame)) {
    tctx.fillStyle = m.kind === 'keyframe' ? '#ffd24d' : m.kind === 'suggestion' ? '#6dff8a' : '#ffffff'
    const w = m.kind === 'cursor' ? 2 : 6
    tctx.fillRect(m.xPx - w / 2, 2, w, timelineEl.height - 4)
  }
}

frameCanvas.addEventListener('pointerdown', (ev) => {
  if (!session) return
  gesture = new DrawGesture({ x: ev.offsetX, y: ev.offsetY }, session.view.transform)
})

frameCanvas.addEventListener('pointermove', (ev) => {
  if (!gesture) return
  gesture.update({ x: ev.offsetX, y: ev.offsetY })
  draft = gesture.preview()
  render()
})

frameCanvas.addEventListener('pointerup', async (ev) => {
  if (!gesture || !session) return
  const box = gesture.finish({ x: ev.offsetX, y: ev.offsetY })
  gesture = null
  draft = null
  if (!box) return render()
  if (!session.id()) {
    await session.start(session.view.frame, box)
  } else {
    await session.acceptFrame(box)
  }
  render()
})

frameCanvas.addEventListener('wheel', (ev) => {
  if (!session) return
  ev.preventDefault()
  session.view.transform = zoomAround(session.view.transform, ev.deltaY < 0 ? 1.2 : 1 / 1.2, {
    x: ev.offsetX,
    y: ev.offsetY,
  })
  render()
})

timelineEl.addEventListener('pointerdown', (ev) => {
  if (!session) return
  const layout: TimelineLayout = { widthPx: timelineEl.width, frameCount: session.video.frame_count }
  session.timelineScrub(xToFrame(layout, ev.offsetX))
  render()
})

window.addEventListener('keydown', async (ev) => {
  if (!session) return
  const t = session.view.transform
  switch (ev.key) {
    case 'ArrowRight':
      session.timelineScrub(session.view.frame + (ev.shiftKey ? 10 : 1))
      break
    case 'ArrowLeft':
      session.timelineScrub(session.view.frame - (ev.shiftKey ? 10 : 1))
      break
    case 'g':
      session.jumpToSuggestion()
      break
    case 'u':
      await session.undoKeyframe()
      break
    case 'f':
      await session.finalize()
      break
    case 'a':
      session.view.transform = pan(t, 30, 0)
      break
    case 'd':
      session.view.transform = pan(t, -30, 0)
      break
    default:
      return
  }
  render()
})

boot().catch((err) => status(String(err)))
