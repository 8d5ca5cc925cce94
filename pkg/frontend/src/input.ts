/**
 * Keyboard state to smoothed per-tick control deltas.
 *
 * Held keys set target rates; the actual rates approach them exponentially
 * with a ~0.2 s time constant, so the control signal stays smooth no matter
 * how abruptly keys are hit. capture() advances the smoother by one tick
 * and returns the distance covered in that tick.
 */

import type { ControlFrame } from './protocol.js'

export interface SpeedLimits {
  /** Top forward speed, cm/s. Forward speed never goes negative. */
  maxFwd: number
  /** Top sideways speed, cm/s, symmetric. */
  maxLat: number
  /** Top turn rate, rad/s, symmetric. */
  maxTurn: number
}

export const DEFAULT_LIMITS: SpeedLimits = { maxFwd: 100, maxLat: 60, maxTurn: 1.5 }

const clamp = (v: number, lo: number, hi: number) => Math.min(hi, Math.max(lo, v))

export class InputState {
  readonly pressed = new Set<string>()
  /** Smoothed rates: cm/s, cm/s, rad/s. */
  fwd = 0
  lat = 0
  rot = 0

  constructor(
    readonly limits: SpeedLimits = DEFAULT_LIMITS,
    readonly tau = 0.2,
  ) {}

  keyDown(code: string): void {
    this.pressed.add(code)
  }

  keyUp(code: string): void {
    this.pressed.delete(code)
  }

  private axis(pos: string[], neg: string[]): number {
    const has = (codes: string[]) => codes.some((c) => this.pressed.has(c))
    return (has(pos) ? 1 : 0) - (has(neg) ? 1 : 0)
  }

  /** Clamped target rates from the keys held right now. */
  target(): { fwd: number; lat: number; rot: number } {
    const l = this.limits
    return {
      fwd: clamp(this.axis(['KeyW', 'ArrowUp'], ['KeyS', 'ArrowDown']) * l.maxFwd, 0, l.maxFwd),
      lat: clamp(this.axis(['KeyD'], ['KeyA']) * l.maxLat, -l.maxLat, l.maxLat),
      rot: clamp(this.axis(['KeyE', 'ArrowRight'], ['KeyQ', 'ArrowLeft']) * l.maxTurn, -l.maxTurn, l.maxTurn),
    }
  }

  /** Advance the smoother by dt seconds; returns this tick's deltas. */
  capture(dt: number): ControlFrame {
    if (!(dt > 0)) throw new Error('dt must be positive')
    const t = this.target()
    const k = 1 - Math.exp(-dt / this.tau)
    this.fwd += (t.fwd - this.fwd) * k
    this.lat += (t.lat - this.lat) * k
    this.rot += (t.rot - this.rot) * k
    return { fwd: this.fwd * dt, lat: this.lat * dt, rot: this.rot * dt }
  }
}
