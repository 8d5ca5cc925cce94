import { expect, test } from 'vitest'

import { InputState } from '../src/input.js'

const DT = 0.05

test('no keys held yields exactly zero control', () => {
  const input = new InputState()
  expect(input.capture(DT)).toEqual({ fwd: 0, lat: 0, rot: 0 })
})

test('held forward key approaches max speed with the configured time constant', () => {
  const input = new InputState()
  input.keyDown('KeyW')
  const k = 1 - Math.exp(-DT / input.tau)
  let expected = 0
  for (let n = 1; n <= 120; n++) {
    const frame = input.capture(DT)
    expected += (input.limits.maxFwd - expected) * k
    expect(frame.fwd).toBeCloseTo(expected * DT, 12)
  }
  // 6 s >> tau: converged, one tick covers maxFwd * dt (the 100 cm/s,
  // dt = 0.05 -> 5 cm case)
  expect(input.capture(DT).fwd).toBeCloseTo(5, 6)
})

test('after one time constant the speed is a 1 - 1/e fraction of max', () => {
  const input = new InputState()
  input.keyDown('KeyW')
  const ticks = Math.round(input.tau / DT)
  let last = { fwd: 0, lat: 0, rot: 0 }
  for (let n = 0; n < ticks; n++) last = input.capture(DT)
  const fraction = last.fwd / DT / input.limits.maxFwd
  expect(fraction).toBeCloseTo(1 - Math.exp(-1), 9)
})

test('opposite keys cancel to zero net control', () => {
  const input = new InputState()
  for (const code of ['KeyW', 'KeyS', 'KeyA', 'KeyD', 'KeyQ', 'KeyE']) input.keyDown(code)
  expect(input.target()).toEqual({ fwd: 0, lat: 0, rot: 0 })
  expect(input.capture(DT)).toEqual({ fwd: 0, lat: 0, rot: 0 })
})

test('forward speed is clamped to [0, max]', () => {
  const input = new InputState()
  input.keyDown('KeyS')
  // back key alone brakes to zero, never reverses
  expect(input.target().fwd).toBe(0)
  for (let n = 0; n < 50; n++) expect(input.capture(DT).fwd).toBeGreaterThanOrEqual(0)
  input.keyUp('KeyS')
  input.keyDown('KeyW')
  for (let n = 0; n < 400; n++) {
    expect(input.capture(DT).fwd).toBeLessThanOrEqual(input.limits.maxFwd * DT)
  }
})

test('release decays smoothly back toward zero', () => {
  const input = new InputState()
  input.keyDown('KeyD')
  for (let n = 0; n < 100; n++) input.capture(DT)
  input.keyUp('KeyD')
  let prev = input.capture(DT).lat
  for (let n = 0; n < 100; n++) {
    const cur = input.capture(DT).lat
    expect(cur).toBeLessThan(prev)
    expect(cur).toBeGreaterThanOrEqual(0)
    prev = cur
  }
  expect(prev).toBeLessThan(1e-6)
})

test('arrow keys alias the letter controls', () => {
  const input = new InputState()
  input.keyDown('ArrowUp')
  input.keyDown('ArrowRight')
  const t = input.target()
  expect(t.fwd).toBe(input.limits.maxFwd)
  expect(t.rot).toBe(input.limits.maxTurn)
})

test('turn is symmetric', () => {
  const a = new InputState()
  const b = new InputState()
  a.keyDown('KeyQ')
  b.keyDown('KeyE')
  for (let n = 0; n < 30; n++) {
    expect(a.capture(DT).rot).toBeCloseTo(-b.capture(DT).rot, 12)
  }
})

test('rejects a non-positive dt', () => {
  expect(() => new InputState().capture(0)).toThrow()
})
