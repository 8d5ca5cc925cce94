/** Browser entry point: wires DOM input and canvas to a steering session. */

import { InputState } from './input.js'
import { buildScene, emptyView, paint } from './render.js'
import { SteerSession } from './session.js'

const params = new URLSearchParams(window.location.search)
const wsUrl =
  params.get('url') ?? `ws://${window.location.hostname || 'localhost'}:8765/ws`
const checkpoint = params.get('checkpoint') ?? 'walker.mgck'
const seed = Number(params.get('seed') ?? '0') | 0
const temperature = Number(params.get('temperature') ?? '1.0')

const canvas = document.getElementById('stage') as HTMLCanvasElement
const ctx = canvas.getContext('2d')!
const slider = document.getElementById('temp') as HTMLInputElement
const sliderLabel = document.getElementById('temp-label') as HTMLElement
const phaseLabel = document.getElementById('phase') as HTMLElement

const input = new InputState()
const view = emptyView(temperature, seed)
const session = new SteerSession({
  url: wsUrl,
  checkpoint,
  temperature,
  seed,
  input,
  view,
  onPhase: (phase) => {
    phaseLabel.textContent = phase
  },
})

window.addEventListener('keydown', (ev) => {
  if (ev.code.startsWith('Arrow')) ev.preventDefault()
  input.keyDown(ev.code)
})
window.addEventListener('keyup', (ev) => input.keyUp(ev.code))
window.addEventListener('blur', () => input.pressed.clear())

slider.value = String(temperature)
sliderLabel.textContent = temperature.toFixed(2)
slider.addEventListener('change', () => {
  const t = Number(slider.value)
  sliderLabel.textContent = t.toFixed(2)
  session.setTemperature(t)
})

function resize(): void {
  canvas.width = canvas.clientWidth
  canvas.height = canvas.clientHeight
}
window.addEventListener('resize', resize)
resize()

function frame(): void {
  paint(ctx, buildScene(view, canvas.width, canvas.height), canvas.width, canvas.height)
  requestAnimationFrame(frame)
}
requestAnimationFrame(frame)

session.start()
window.addEventListener('beforeunload', () => session.stop())
