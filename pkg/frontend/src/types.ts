export interface Box {
  x: number
  y: number
  w: number
  h: number
}

export interface TrackEntry {
  frame: number
  x: number
  y: number
  w: number
  h: number
  provenance: 'human' | 'visual' | 'blended' | 'geometric'
  confidence: number
}

export interface VideoInfo {
  video_id: string
  frame_count: number
  width: number
  height: number
}

export interface SessionInfo {
  session_id: string
  suggestion: number | null
}

export interface KeyframeResponse {
  suggestion: number | null
  changed: { from: number; to: number } | null
  deduplicated?: boolean
}

export interface Point {
  x: number
  y: number
}
