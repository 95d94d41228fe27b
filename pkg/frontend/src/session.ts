import { ApiClient, ApiError } from './api.js'
import type { Box, TrackEntry, VideoInfo } from './types.js'
import { identityTransform, type ViewTransform } from './transform.js'

export interface ViewState {
  frame: number
  transform: ViewTransform
  suggestion: number | null
  banner: string | null
  finalized: boolean
}

/** Client-side session: caches the track, posts keyframes optimistically and
 * reconciles against the server's changed-range response.
 *
 * One in-flight mutation at a time; the server remains the source of truth
 * for every frame it reports changed.
 */
export class ClientSession {
  readonly view: ViewState = {
    frame: 0,
    transform: { ...identityTransform },
    suggestion: null,
    banner: null,
    finalized: false,
  }
  private track = new Map<number, TrackEntry>()
  private keyframes = new Set<number>()
  private undoStack: number[] = []
  private sessionId = ''

  constructor(
    private readonly api: ApiClient,
    readonly video: VideoInfo,
    private readonly objectId: string,
  ) {}

  async start(frame: number, box: Box, seed = 0): Promise<void> {
    const info = await this.api.createSession(this.video.video_id, this.objectId, frame, box, seed)
    this.sessionId = info.session_id
    this.view.suggestion = info.suggestion
    this.view.frame = frame
    this.keyframes.add(frame)
    await this.refreshTrack()
  }

  id(): string {
    return this.sessionId
  }

  boxAt(frame: number): TrackEntry | undefined {
    return this.track.get(frame)
  }

  entriesInRange(from: number, to: number): TrackEntry[] {
    const out: TrackEntry[] = []
    for (let f = from; f <= to; f++) {
      const e = this.track.get(f)
      if (e) out.push(e)
    }
    return out
  }

  keyframeList(): number[] {
    return [...this.keyframes].sort((a, b) => a - b)
  }

  timelineScrub(frame: number): void {
    this.view.frame = Math.min(this.video.frame_count - 1, Math.max(0, Math.round(frame)))
  }

  jumpToSuggestion(): boolean {
    if (this.view.suggestion === null) return false
    this.view.frame = this.view.suggestion
    return true
  }

  /** Post the drawn box for the current frame. Renders optimistically, then
   * replaces every frame the server reports changed with its authoritative
   * boxes. Server rejections leave the track untouched and surface a banner. */
  async acceptFrame(box: Box): Promise<boolean> {
    const frame = this.view.frame
    const before = this.track.get(frame)
    this.track.set(frame, { frame, ...box, provenance: 'human', confidence: 1 })
    try {
      const resp = await this.api.postKeyframe(this.sessionId, frame, box)
      this.keyframes.add(frame)
      this.undoStack.push(frame)
      this.view.suggestion = resp.suggestion
      this.view.banner = null
      if (resp.changed) {
        await this.reconcile(resp.changed.from, resp.changed.to)
      }
      return true
    } catch (err) {
      if (before) this.track.set(frame, before)
      else this.track.delete(frame)
      this.view.banner = err instanceof ApiError ? `${err.status}: ${err.message}` : String(err)
      return false
    }
  }

  /** Remove the most recently accepted keyframe. */
  async undoKeyframe(): Promise<boolean> {
    const frame = this.undoStack.pop()
    if (frame === undefined) {
      this.view.banner = 'nothing to undo'
      return false
    }
    try {
      const resp = await this.api.deleteKeyframe(this.sessionId, frame)
      this.keyframes.delete(frame)
      this.view.suggestion = resp.suggestion
      this.view.banner = null
      if (resp.changed) {
        await this.reconcile(resp.changed.from, resp.changed.to)
      }
      return true
    } catch (err) {
      this.undoStack.push(frame)
      this.view.banner = err instanceof ApiError ? `${err.status}: ${err.message}` : String(err)
      return false
    }
  }

  async finalize(): Promise<void> {
    await this.api.finalize(this.sessionId)
    this.view.finalized = true
  }

  async refreshTrack(): Promise<void> {
    const entries = await this.api.getTrack(this.sessionId)
    this.track.clear()
    for (const e of entries) this.track.set(e.frame, e)
  }

  private async reconcile(from: number, to: number): Promise<void> {
    const entries = await this.api.getTrack(this.sessionId, from, to)
    for (const e of entries) this.track.set(e.frame, e)
  }
}
