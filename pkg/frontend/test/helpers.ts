/** Deterministic clock and scripted server for headless session tests. */

import type { ControlMsg, OpenMsg, TempMsg } from '../src/protocol.js'
import type { Clock, SocketFactory, SocketLike } from '../src/session.js'

interface PendingTimer {
  due: number
  fn: () => void
}

/** Manual clock: timers fire in due order (insertion order on ties) when
 * advance() sweeps past them. */
export class FakeClock implements Clock {
  private t = 0
  private nextId = 1
  private timers = new Map<number, PendingTimer>()

  now(): number {
    return this.t
  }

  setTimeout(fn: () => void, ms: number): number {
    const id = this.nextId++
    this.timers.set(id, { due: this.t + ms, fn })
    return id
  }

  clearTimeout(id: number): void {
    this.timers.delete(id)
  }

  advance(ms: number): void {
    const end = this.t + ms
    for (;;) {
      let pickId = -1
      let pickDue = Infinity
      for (const [id, timer] of this.timers) {
        if (timer.due <= end && (timer.due < pickDue || (timer.due === pickDue && id < pickId))) {
          pickId = id
          pickDue = timer.due
        }
      }
      if (pickId < 0) break
      const timer = this.timers.get(pickId)!
      this.timers.delete(pickId)
      this.t = Math.max(this.t, timer.due)
      timer.fn()
    }
    this.t = end
  }
}

export interface Root {
  x: number
  z: number
  theta: number
}

/** Same integration rule as the server: previous heading, then turn. */
export function stepRoot(root: Root, fwd: number, lat: number, rot: number): Root {
  const s = Math.sin(root.theta)
  const c = Math.cos(root.theta)
  return {
    x: root.x + fwd * s + lat * c,
    z: root.z + fwd * c - lat * s,
    theta: root.theta + rot,
  }
}

export class FakeSocket implements SocketLike {
  onopen: (() => void) | null = null
  onmessage: ((ev: { data: string }) => void) | null = null
  onclose: (() => void) | null = null
  closedByClient = false

  constructor(private readonly server: FakeServer) {}

  send(data: string): void {
    this.server.handle(this, data)
  }

  close(): void {
    this.closedByClient = true
  }

  receive(msg: object): void {
    this.onmessage?.({ data: JSON.stringify(msg) })
  }

  serverDrop(): void {
    this.onclose?.()
  }
}

interface Stamped<T> {
  msg: T
  at: number
}

/**
 * In-memory stand-in for the steering service: replies synchronously,
 * integrates control exactly like the real server (rates divided by fps).
 */
export class FakeServer {
  readonly fps = 20
  joints = ['hip', 'chest', 'head']
  parents = [-1, 0, 1]
  offsets = [
    [0, 95, 0],
    [0, 30, 0],
    [0, 25, 0],
  ]
  /** Root-local joint positions sent back with every pose. */
  localPose = [
    [0, 95, 0],
    [0, 125, 0],
    [0, 150, 0],
  ]

  opens: Stamped<OpenMsg>[] = []
  controls: Stamped<ControlMsg>[] = []
  temps: Stamped<TempMsg>[] = []
  closes = 0
  /** Refuse this many opens with an error frame before serving again. */
  refuseOpens = 0
  /** Drop this many opens cold (connection dies) before serving again. */
  dropNextOpens = 0
  /** Swallow pose replies (for loss-tolerance tests). */
  mute = false

  sockets: FakeSocket[] = []
  root: Root = { x: 0, z: 0, theta: 0 }
  frame = 0

  constructor(private readonly clock: FakeClock) {}

  /** Socket factory handing out sockets that open on the next clock sweep. */
  factory(): SocketFactory {
    return () => {
      const socket = new FakeSocket(this)
      this.sockets.push(socket)
      this.clock.setTimeout(() => socket.onopen?.(), 0)
      return socket
    }
  }

  dropAll(): void {
    const active = this.sockets
    this.sockets = []
    for (const socket of active) socket.serverDrop()
  }

  handle(socket: FakeSocket, raw: string): void {
    const msg = JSON.parse(raw)
    const at = this.clock.now()
    switch (msg.type) {
      case 'open':
        this.opens.push({ msg, at })
        if (this.dropNextOpens > 0) {
          this.dropNextOpens -= 1
          socket.serverDrop()
          return
        }
        if (this.refuseOpens > 0) {
          this.refuseOpens -= 1
          socket.receive({ type: 'error', msg: `unknown checkpoint '${msg.checkpoint}'` })
          return
        }
        this.root = { x: 0, z: 0, theta: 0 }
        this.frame = 0
        socket.receive({
          type: 'skeleton',
          joints: this.joints,
          parents: this.parents,
          offsets: this.offsets,
          fps: this.fps,
          units: 'cm',
        })
        return
      case 'control': {
        this.controls.push({ msg, at })
        this.root = stepRoot(this.root, msg.fwd / this.fps, msg.lat / this.fps, msg.rot / this.fps)
        if (this.mute) return
        socket.receive({
          type: 'pose',
          frame: this.frame++,
          root: { ...this.root },
          joints: this.localPose,
        })
        return
      }
      case 'temp':
        this.temps.push({ msg, at })
        socket.receive({ type: 'ack', t: msg.t })
        return
      case 'close':
        this.closes += 1
        return
    }
  }
}
