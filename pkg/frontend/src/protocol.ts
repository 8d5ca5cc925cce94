/**
 * JSON wire schema for the steering socket.
 *
 * Client frames carry rates (cm/s, rad/s); the server divides by its frame
 * rate. The input layer works in per-tick deltas, so controlToWire converts
 * at the boundary.
 */

/** Per-tick control deltas: cm and radians accumulated over one tick. */
export type ControlFrame = { fwd: number; lat: number; rot: number }

export type OpenMsg = {
  type: 'open'
  checkpoint: string
  temperature: number
  seed: number
}
export type ControlMsg = { type: 'control'; fwd: number; lat: number; rot: number }
export type TempMsg = { type: 'temp'; t: number }
export type CloseMsg = { type: 'close' }
export type ClientMsg = OpenMsg | ControlMsg | TempMsg | CloseMsg

export type SkeletonMsg = {
  type: 'skeleton'
  joints: string[]
  parents: number[]
  offsets: number[][]
  fps: number
  units: string
}
export type PoseMsg = {
  type: 'pose'
  frame: number
  root: { x: number; z: number; theta: number }
  joints: number[][]
}
export type AckMsg = { type: 'ack'; t: number }
export type ErrorMsg = { type: 'error'; msg: string }
export type ServerMsg = SkeletonMsg | PoseMsg | AckMsg | ErrorMsg

function isNum(v: unknown): v is number {
  return typeof v === 'number' && Number.isFinite(v)
}

function isNumArray(v: unknown): v is number[] {
  return Array.isArray(v) && v.every(isNum)
}

/** Parse and shape-check one server frame; null for anything malformed. */
export function parseServerMsg(raw: string): ServerMsg | null {
  let msg: unknown
  try {
    msg = JSON.parse(raw)
  } catch {
    return null
  }
  if (typeof msg !== 'object' || msg === null) return null
  const m = msg as Record<string, unknown>
  switch (m.type) {
    case 'skeleton': {
      const ok =
        Array.isArray(m.joints) &&
        (m.joints as unknown[]).every((j) => typeof j === 'string') &&
        isNumArray(m.parents) &&
        Array.isArray(m.offsets) &&
        (m.offsets as unknown[]).every((o) => isNumArray(o) && o.length === 3) &&
        isNum(m.fps) &&
        typeof m.units === 'string'
      return ok ? (m as SkeletonMsg) : null
    }
    case 'pose': {
      const root = m.root as Record<string, unknown> | undefined
      const ok =
        isNum(m.frame) &&
        typeof root === 'object' &&
        root !== null &&
        isNum(root.x) &&
        isNum(root.z) &&
        isNum(root.theta) &&
        Array.isArray(m.joints) &&
        (m.joints as unknown[]).every((j) => isNumArray(j) && j.length === 3)
      return ok ? (m as PoseMsg) : null
    }
    case 'ack':
      return isNum(m.t) ? (m as AckMsg) : null
    case 'error':
      return typeof m.msg === 'string' ? (m as ErrorMsg) : null
    default:
      return null
  }
}

/** Per-tick deltas to wire rates. dt is the tick length in seconds. */
export function controlToWire(c: ControlFrame, dt: number): ControlMsg {
  if (!(dt > 0)) throw new Error('tick length must be positive')
  return { type: 'control', fwd: c.fwd / dt, lat: c.lat / dt, rot: c.rot / dt }
}

export function openMsg(checkpoint: string, temperature: number, seed: number): OpenMsg {
  return { type: 'open', checkpoint, temperature, seed }
}
