/**
 * Steering session: socket lifecycle plus the 20 Hz control loop.
 *
 * The session owns the clock. While connected it sends exactly one control
 * message per tick, paced against absolute deadlines so the cadence does
 * not drift. A dropped socket moves to backoff and reconnects with
 * exponentially growing delays; the trail survives the gap.
 *
 * Socket and timer implementations are injectable so the whole loop runs
 * headless under test.
 */

import { InputState } from './input.js'
import { controlToWire, openMsg, parseServerMsg, type PoseMsg } from './protocol.js'
import { applyPose, type ViewState } from './render.js'

export interface SocketLike {
  send(data: string): void
  close(): void
  onopen: (() => void) | null
  onmessage: ((ev: { data: string }) => void) | null
  onclose: (() => void) | null
}

export type SocketFactory = (url: string) => SocketLike

export interface Clock {
  now(): number
  setTimeout(fn: () => void, ms: number): number
  clearTimeout(id: number): void
}

export const realClock: Clock = {
  now: () => Date.now(),
  setTimeout: (fn, ms) => setTimeout(fn, ms) as unknown as number,
  clearTimeout: (id) => clearTimeout(id),
}

export type SessionPhase = 'idle' | 'connecting' | 'open' | 'ready' | 'backoff' | 'closed'

export interface SessionOptions {
  url: string
  checkpoint: string
  temperature: number
  seed: number
  input: InputState
  view: ViewState
  /** Control ticks per second; matches the model frame rate. */
  hz?: number
  makeSocket?: SocketFactory
  clock?: Clock
  baseRetryMs?: number
  maxRetryMs?: number
  onPose?: (msg: PoseMsg) => void
  onPhase?: (phase: SessionPhase) => void
}

const defaultSocketFactory: SocketFactory = (url) =>
  new WebSocket(url) as unknown as SocketLike

export class SteerSession {
  phase: SessionPhase = 'idle'
  controlsSent = 0

  private readonly hz: number
  private readonly period: number
  private readonly clock: Clock
  private readonly makeSocket: SocketFactory
  private socket: SocketLike | null = null
  private tickId: number | null = null
  private retryId: number | null = null
  private nextTickAt = 0
  private firstTickAt = 0
  private retries = 0
  private stopped = false

  constructor(private readonly opts: SessionOptions) {
    this.hz = opts.hz ?? 20
    this.period = 1000 / this.hz
    this.clock = opts.clock ?? realClock
    this.makeSocket = opts.makeSocket ?? defaultSocketFactory
  }

  start(): void {
    this.stopped = false
    this.connect()
  }

  stop(): void {
    this.stopped = true
    this.cancelTimers()
    if (this.socket && (this.phase === 'open' || this.phase === 'ready')) {
      this.socket.send(JSON.stringify({ type: 'close' }))
    }
    this.socket?.close()
    this.socket = null
    this.setPhase('closed')
  }

  setTemperature(t: number): void {
    if (this.socket && (this.phase === 'open' || this.phase === 'ready')) {
      this.socket.send(JSON.stringify({ type: 'temp', t }))
    }
  }

  private setPhase(phase: SessionPhase): void {
    this.phase = phase
    this.opts.onPhase?.(phase)
  }

  private connect(): void {
    this.setPhase('connecting')
    const socket = this.makeSocket(this.opts.url)
    this.socket = socket
    socket.onopen = () => {
      this.setPhase('open')
      socket.send(
        JSON.stringify(openMsg(this.opts.checkpoint, this.opts.temperature, this.opts.seed)),
      )
    }
    socket.onmessage = (ev) => this.handleMessage(ev.data)
    socket.onclose = () => this.handleDrop()
  }

  private handleMessage(raw: string): void {
    const view = this.opts.view
    const msg = parseServerMsg(raw)
    if (msg === null) {
      // keep the last pose; just surface the badge
      view.error = 'malformed message from server'
      return
    }
    switch (msg.type) {
      case 'skeleton':
        view.skeleton = msg
        view.error = null
        // a fresh session starts with its root at the origin
        view.trail.push({ x: 0, z: 0 })
        this.retries = 0
        this.setPhase('ready')
        this.startTicking()
        break
      case 'pose':
        applyPose(view, msg)
        this.opts.onPose?.(msg)
        break
      case 'ack':
        view.temperature = msg.t
        break
      case 'error':
        view.error = msg.msg
        break
    }
  }

  private startTicking(): void {
    this.cancelTick()
    this.firstTickAt = this.clock.now() + this.period
    this.nextTickAt = this.firstTickAt
    this.tickId = this.clock.setTimeout(() => this.tick(), this.period)
  }

  private tick(): void {
    if (this.phase !== 'ready' || this.socket === null) return
    const frame = this.opts.input.capture(1 / this.hz)
    this.socket.send(JSON.stringify(controlToWire(frame, 1 / this.hz)))
    this.controlsSent += 1
    const now = this.clock.now()
    if (this.controlsSent >= 2 && now > this.firstTickAt) {
      this.opts.view.hz = (1000 * (this.controlsSent - 1)) / (now - this.firstTickAt)
    }
    // absolute deadlines, so one slow tick does not shift the cadence
    this.nextTickAt += this.period
    this.tickId = this.clock.setTimeout(
      () => this.tick(),
      Math.max(0, this.nextTickAt - now),
    )
  }

  private handleDrop(): void {
    this.cancelTick()
    this.socket = null
    if (this.stopped) return
    const base = this.opts.baseRetryMs ?? 500
    const cap = this.opts.maxRetryMs ?? 8000
    const delay = Math.min(cap, base * Math.pow(1.8, this.retries))
    this.retries += 1
    this.opts.view.error = `connection lost, retrying in ${(delay / 1000).toFixed(1)} s`
    this.setPhase('backoff')
    this.retryId = this.clock.setTimeout(() => this.connect(), delay)
  }

  private cancelTick(): void {
    if (this.tickId !== null) {
      this.clock.clearTimeout(this.tickId)
      this.tickId = null
    }
  }

  private cancelTimers(): void {
    this.cancelTick()
    if (this.retryId !== null) {
      this.clock.clearTimeout(this.retryId)
      this.retryId = null
    }
  }
}
