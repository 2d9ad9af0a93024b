/** Force-directed layout with Barnes-Hut approximated repulsion.
 *
 * Per step: a quadtree over node positions approximates the repulsive force
 * on each node — cells whose size/distance ratio is below the opening angle
 * theta act as a single body at their center of mass, everything else
 * recurses down to exact pairwise terms (theta = 0 therefore reproduces the
 * exact O(n²) computation). Edges pull as springs toward a rest length, a
 * weak centering force keeps components on screen, and velocities integrate
 * with damping. Locked (dragged) nodes receive zero displacement.
 */

import { buildQuadtree, type Body, type QuadNode } from "./quadtree.js";

export interface LayoutParams {
    theta: number;          // Barnes-Hut opening angle
    repulsion: number;      // pairwise repulsion constant
    springConstant: number; // edge attraction
    springRestLength: number;
    damping: number;        // velocity retention per step, in (0, 1)
    timeStep: number;
    centerStrength: number; // weak pull toward the view origin
    iterationCap: number;   // max layout steps per animation frame
}

export const DEFAULT_LAYOUT: LayoutParams = {
    theta: 0.5,
    repulsion: 8000,
    springConstant: 0.02,
    springRestLength: 120,
    damping: 0.9,
    timeStep: 1.0,
    centerStrength: 0.005,
    iterationCap: 2,
};

export interface LayoutPoint {
    x: number;
    y: number;
    vx: number;
    vy: number;
    locked: boolean;
}

export interface LayoutEdge {
    a: number; // indices into the points array
    b: number;
}

/** Coincident points make the repulsion direction undefined; nudge the later
 * one by a small deterministic epsilon before force evaluation. */
export const COINCIDENT_EPSILON = 1e-4;

export function separateCoincident(points: LayoutPoint[]): void {
    const seen = new Map<string, number>();
    for (let i = 0; i < points.length; i++) {
        const p = points[i];
        let key = `${p.x},${p.y}`;
        let bump = 0;
        while (seen.has(key)) {
            bump += 1;
            const angle = (i * 0.7391 + bump) % (2 * Math.PI);
            p.x += COINCIDENT_EPSILON * bump * Math.cos(angle);
            p.y += COINCIDENT_EPSILON * bump * Math.sin(angle);
            key = `${p.x},${p.y}`;
        }
        seen.set(key, i);
    }
}

function accumulateRepulsion(
    node: QuadNode,
    body: Body,
    theta: number,
    repulsion: number,
    out: { fx: number; fy: number },
): void {
    if (node.mass === 0) return;
    if (node.body !== null && node.body.index === body.index) return; // self

    if (node.bucket !== null) {
        for (const other of node.bucket) {
            if (other.index === body.index) continue;
            const dx = body.x - other.x;
            const dy = body.y - other.y;
            const distSq = dx * dx + dy * dy;
            if (distSq === 0) continue;
            const dist = Math.sqrt(distSq);
            const magnitude = repulsion / distSq;
            out.fx += (magnitude * dx) / dist;
            out.fy += (magnitude * dy) / dist;
        }
        return;
    }

    const dx = body.x - node.comX;
    const dy = body.y - node.comY;
    const distSq = dx * dx + dy * dy;
    const dist = Math.sqrt(distSq);

    const farEnough = dist > 0 && node.size / dist < theta && !node.contains(body.x, body.y);
    if (node.isLeaf || farEnough) {
        if (dist === 0) return; // coincident after jitter exhaustion: no direction
        const magnitude = (repulsion * node.mass) / distSq;
        out.fx += (magnitude * dx) / dist;
        out.fy += (magnitude * dy) / dist;
        return;
    }
    for (const child of node.children) {
        if (child !== null) accumulateRepulsion(child, body, theta, repulsion, out);
    }
}

/** Repulsive force on every point; exported for the exact-force oracle. */
export function repulsionForces(
    points: { x: number; y: number }[],
    theta: number,
    repulsion: number,
): { fx: number; fy: number }[] {
    const bodies: Body[] = points.map((p, index) => ({ x: p.x, y: p.y, index }));
    const root = buildQuadtree(bodies);
    return bodies.map((body) => {
        const out = { fx: 0, fy: 0 };
        if (root !== null) accumulateRepulsion(root, body, theta, repulsion, out);
        return out;
    });
}

/** One integration step; mutates point positions/velocities in place. */
export function layoutStep(
    points: LayoutPoint[],
    edges: LayoutEdge[],
    params: LayoutParams,
): void {
    if (points.length === 0) return;
    separateCoincident(points);

    const forces = repulsionForces(points, params.theta, params.repulsion);

    for (const edge of edges) {
        const pa = points[edge.a];
        const pb = points[edge.b];
        const dx = pb.x - pa.x;
        const dy = pb.y - pa.y;
        const dist = Math.max(Math.sqrt(dx * dx + dy * dy), 1e-9);
        const stretch = dist - params.springRestLength;
        const f = params.springConstant * stretch;
        forces[edge.a].fx += (f * dx) / dist;
        forces[edge.a].fy += (f * dy) / dist;
        forces[edge.b].fx -= (f * dx) / dist;
        forces[edge.b].fy -= (f * dy) / dist;
    }

    for (let i = 0; i < points.length; i++) {
        const p = points[i];
        if (p.locked) {
            p.vx = 0;
            p.vy = 0;
            continue;
        }
        const fx = forces[i].fx - p.x * params.centerStrength;
        const fy = forces[i].fy - p.y * params.centerStrength;
        p.vx = (p.vx + fx * params.timeStep) * params.damping;
        p.vy = (p.vy + fy * params.timeStep) * params.damping;
        p.x += p.vx * params.timeStep;
        p.y += p.vy * params.timeStep;
    }
}
