/**
 * View state and stick-figure rendering.
 *
 * buildScene is a pure function of the view: it returns line segments and
 * HUD text in screen coordinates, and paint() just strokes them onto a
 * canvas. Protocol handlers mutate the view; rendering never does.
 *
 * Joints arrive root-local; the world transform matches the server side:
 * forward is (sin theta, cos theta) in the ground plane.
 */

import type { PoseMsg, SkeletonMsg } from './protocol.js'

export interface TrailPoint {
  x: number
  z: number
}

export interface ViewState {
  skeleton: SkeletonMsg | null
  pose: PoseMsg | null
  trail: TrailPoint[]
  maxTrail: number
  error: string | null
  temperature: number
  seed: number
  /** Measured control rate for the HUD, Hz. */
  hz: number
}

export function emptyView(temperature = 1.0, seed = 0, maxTrail = 2000): ViewState {
  return {
    skeleton: null,
    pose: null,
    trail: [],
    maxTrail,
    error: null,
    temperature,
    seed,
    hz: 0,
  }
}

/** Record a pose reply: replace the current pose, grow the bounded trail. */
export function applyPose(view: ViewState, msg: PoseMsg): void {
  view.pose = msg
  view.trail.push({ x: msg.root.x, z: msg.root.z })
  if (view.trail.length > view.maxTrail) {
    view.trail.splice(0, view.trail.length - view.maxTrail)
  }
}

/** Ground-plane length of the trail polyline, cm. */
export function trailLength(trail: TrailPoint[]): number {
  let total = 0
  for (let i = 1; i < trail.length; i++) {
    total += Math.hypot(trail[i].x - trail[i - 1].x, trail[i].z - trail[i - 1].z)
  }
  return total
}

/** Root-local joints to world space under the pose's root transform. */
export function worldJoints(pose: PoseMsg): number[][] {
  const { x, z, theta } = pose.root
  const s = Math.sin(theta)
  const c = Math.cos(theta)
  return pose.joints.map(([lx, ly, lz]) => [
    lx * c + lz * s + x,
    ly,
    -lx * s + lz * c + z,
  ])
}

export interface Segment {
  x1: number
  y1: number
  x2: number
  y2: number
  kind: 'bone' | 'trail'
}

export interface Scene {
  segments: Segment[]
  hud: string[]
  badge: string | null
}

// oblique offsets: depth pushes things up and slightly left
const OBL_X = -0.45
const OBL_Y = 0.35

/** Pure projection of the view into screen-space segments and HUD text. */
export function buildScene(view: ViewState, width: number, height: number, scale = 3): Scene {
  const segments: Segment[] = []
  const cam = view.pose ? view.pose.root : { x: 0, z: 0 }
  const groundY = height * 0.62
  const project = (wx: number, wy: number, wz: number): [number, number] => {
    const dx = wx - cam.x
    const dz = wz - cam.z
    return [width / 2 + (dx + OBL_X * dz) * scale, groundY - (wy + OBL_Y * dz) * scale]
  }

  for (let i = 1; i < view.trail.length; i++) {
    const [x1, y1] = project(view.trail[i - 1].x, 0, view.trail[i - 1].z)
    const [x2, y2] = project(view.trail[i].x, 0, view.trail[i].z)
    segments.push({ x1, y1, x2, y2, kind: 'trail' })
  }

  if (view.skeleton && view.pose && view.pose.joints.length === view.skeleton.parents.length) {
    const world = worldJoints(view.pose)
    view.skeleton.parents.forEach((parent, j) => {
      if (parent < 0) return
      const [x1, y1] = project(world[parent][0], world[parent][1], world[parent][2])
      const [x2, y2] = project(world[j][0], world[j][1], world[j][2])
      segments.push({ x1, y1, x2, y2, kind: 'bone' })
    })
  }

  const hud = [
    `rate ${view.hz.toFixed(1)} Hz`,
    `temperature ${view.temperature.toFixed(2)}`,
    `seed ${view.seed}`,
  ]
  if (view.pose) hud.push(`frame ${view.pose.frame}`)
  return { segments, hud, badge: view.error }
}

const COLORS = { bone: '#222222', trail: '#3060c0' }

export function paint(ctx: CanvasRenderingContext2D, scene: Scene, width: number, height: number): void {
  ctx.clearRect(0, 0, width, height)
  for (const kind of ['trail', 'bone'] as const) {
    ctx.strokeStyle = COLORS[kind]
    ctx.lineWidth = kind === 'bone' ? 3 : 1.5
    ctx.beginPath()
    for (const seg of scene.segments) {
      if (seg.kind !== kind) continue
      ctx.moveTo(seg.x1, seg.y1)
      ctx.lineTo(seg.x2, seg.y2)
    }
    ctx.stroke()
  }
  ctx.fillStyle = '#222222'
  ctx.font = '13px monospace'
  scene.hud.forEach((line, i) => ctx.fillText(line, 12, 20 + 16 * i))
  if (scene.badge) {
    ctx.fillStyle = '#b02020'
    ctx.fillText(`error: ${scene.badge}`, 12, height - 14)
  }
}
