import type { Box, KeyframeResponse, SessionInfo, TrackEntry, VideoInfo } from './types.js'

export class ApiError extends Error {
  constructor(readonly status: number, message: string) {
    super(message)
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>

/** Thin typed client over the annotation service endpoints. */
export class ApiClient {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchImpl: FetchLike = (...args) => fetch(...args),
  ) {}

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const resp = await this.fetchImpl(`${this.baseUrl}${path}`, {
      method,
      headers: body === undefined ? undefined : { 'content-type': 'application/json' },
      body: body === undefined ? undefined : JSON.stringify(body),
    })
    const text = await resp.text()
    if (!resp.ok) {
      let message = text
      try {
        message = (JSON.parse(text) as { error?: string }).error ?? text
      } catch {
        /* non-JSON error body */
      }
      throw new ApiError(resp.status, message)
    }
    return JSON.parse(text) as T
  }

  registerVideo(framesDir: string): Promise<VideoInfo> {
    return this.request('POST', '/videos', { frames_dir: framesDir })
  }

  createSession(videoId: string, objectId: string, frame: number, box: Box, seed = 0): Promise<SessionInfo> {
    return this.request('POST', '/sessions', { video_id: videoId, object_id: objectId, frame, box, seed })
  }

  postKeyframe(sessionId: string, frame: number, box: Box, idempotencyKey?: string): Promise<KeyframeResponse> {
    return this.request('POST', `/sessions/${sessionId}/keyframes`, {
      frame,
      box,
      idempotency_key: idempotencyKey ?? null,
    })
  }

  deleteKeyframe(sessionId: string, frame: number): Promise<KeyframeResponse> {
    return this.request('DELETE', `/sessions/${sessionId}/keyframes/${frame}`)
  }

  async getTrack(sessionId: string, from?: number, to?: number): Promise<TrackEntry[]> {
    const params = new URLSearchParams()
    if (from !== undefined) params.set('from', String(from))
    if (to !== undefined) params.set('to', String(to))
    const query = params.toString()
    const body = await this.request<{ boxes: TrackEntry[] }>(
      'GET',
      `/sessions/${sessionId}/track${query ? `?${query}` : ''}`,
    )
    return body.boxes
  }

  async getSuggestion(sessionId: string): Promise<number | null> {
    const body = await this.request<{ frame: number | null }>('GET', `/sessions/${sessionId}/suggestion`)
    return body.frame
  }

  finalize(sessionId: string): Promise<{ export: string; n_box: number }> {
    return this.request('POST', `/sessions/${sessionId}/finalize`)
  }

  frameUrl(videoId: string, frame: number): string {
    return `${this.baseUrl}/videos/${videoId}/frames/${frame}`
  }
}
