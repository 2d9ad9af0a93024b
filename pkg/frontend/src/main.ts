/** Canvas explorer: search/query the graph, drag, zoom, expand, collapse. */

import { HttpApiClient } from "./api.js";
import { colorFor } from "./colors.js";
import { DEFAULT_LAYOUT, layoutStep, type LayoutEdge, type LayoutParams } from "./layout.js";
import { ViewState } from "./state.js";
import type { ApiNode } from "./types.js";

const api = new HttpApiClient("");
const state = new ViewState();
const layout: LayoutParams = { ...DEFAULT_LAYOUT };

const canvas = document.getElementById("graph") as HTMLCanvasElement;
const ctx = canvas.getContext("2d") as CanvasRenderingContext2D;

let scale = 1;
let panX = 0;
let panY = 0;
let hoverId: string | null = null;
let hoverDetail: ApiNode | null = null;
let draggingNode: string | null = null;
let panning = false;
let lastMouse = { x: 0, y: 0 };

function toWorld(px: number, py: number): { x: number; y: number } {
    return {
        x: (px - canvas.width / 2 - panX) / scale,
        y: (py - canvas.height / 2 - panY) / scale,
    };
}

function nodeAt(px: number, py: number): string | null {
    const { x, y } = toWorld(px, py);
    for (const node of state.nodes.values()) {
        const dx = node.x - x;
        const dy = node.y - y;
        if (dx * dx + dy * dy <= 10 * 10) return node.id;
    }
    return null;
}

function setStatus(text: string, isError = false): void {
    const el = document.getElementById("status") as HTMLElement;
    el.textContent = text;
    el.className = isError ? "error" : "";
    if (isError) setTimeout(() => (el.textContent = ""), 5000);
}

function updateBackButton(): void {
    (document.getElementById("back") as HTMLButtonElement).disabled = !state.canGoBack();
}

function layoutInputs(): { points: ReturnType<typeof buildPoints>; edges: LayoutEdge[] } {
    const points = buildPoints();
    const index = new Map([...state.nodes.keys()].map((id, i) => [id, i]));
    const edges: LayoutEdge[] = [];
    for (const edge of state.edges) {
        const a = index.get(edge.src);
        const b = index.get(edge.dst);
        if (a !== undefined && b !== undefined) edges.push({ a, b });
    }
    return { points, edges };
}

function buildPoints() {
    return [...state.nodes.values()];
}

function tick(): void {
    const { points, edges } = layoutInputs();
    for (let i = 0; i < layout.iterationCap; i++) layoutStep(points, edges, layout);
    draw();
    requestAnimationFrame(tick);
}

function draw(): void {
    ctx.clearRect(0, 0, canvas.width, canvas.height);
    ctx.save();
    ctx.translate(canvas.width / 2 + panX, canvas.height / 2 + panY);
    ctx.scale(scale, scale);

    ctx.strokeStyle = "#3a4151";
    ctx.fillStyle = "#8b93a5";
    ctx.lineWidth = 1 / scale;
    ctx.font = `${11 / scale}px system-ui`;
    for (const edge of state.edges) {
        const a = state.nodes.get(edge.src);
        const b = state.nodes.get(edge.dst);
        if (!a || !b) continue;
        ctx.beginPath();
        ctx.moveTo(a.x, a.y);
        ctx.lineTo(b.x, b.y);
        ctx.stroke();
        ctx.fillText(edge.verb, (a.x + b.x) / 2 + 4 / scale, (a.y + b.y) / 2 - 4 / scale);
    }

    for (const node of state.nodes.values()) {
        ctx.beginPath();
        ctx.arc(node.x, node.y, 9, 0, 2 * Math.PI);
        ctx.fillStyle = colorFor(node.etype);
        ctx.fill();
        if (node.locked) {
            ctx.strokeStyle = "#f5f7fa";
            ctx.lineWidth = 2 / scale;
            ctx.stroke();
        }
        if (node.id === hoverId) {
            ctx.strokeStyle = "#ffd65c";
            ctx.lineWidth = 2.5 / scale;
            ctx.stroke();
        }
        ctx.fillStyle = "#dfe4ec";
        ctx.fillText(node.description, node.x + 12 / scale, node.y + 4 / scale);
    }
    ctx.restore();

    drawHoverCard();
    const info = document.getElementById("info") as HTMLElement;
    info.textContent =
        `${state.nodes.size}/${state.limits.maxNodes} nodes, ${state.edges.length} edges` +
        (state.truncated ? " (truncated)" : "");
}

function drawHoverCard(): void {
    const card = document.getElementById("hover-card") as HTMLElement;
    if (!hoverId || !hoverDetail || !state.nodes.has(hoverId)) {
        card.style.display = "none";
        return;
    }
    const lines = [
        `<b>${hoverDetail.description}</b> <i>${hoverDetail.etype}</i>`,
        `degree ${hoverDetail.degree}, reports ${hoverDetail.source_report_ids.length}`,
    ];
    for (const [key, values] of Object.entries(hoverDetail.attributes)) {
        lines.push(`${key}: ${values.join(", ")}`);
    }
    card.innerHTML = lines.join("<br>");
    card.style.display = "block";
}

async function runSearch(): Promise<void> {
    const q = (document.getElementById("search-box") as HTMLInputElement).value.trim();
    if (!q) return;
    try {
        const view = q.toLowerCase().startsWith("match")
            ? await api.query(q, state.limits.maxNodes)
            : await api.search(q, state.limits.maxNodes);
        state.loadResult(view, q);
        setStatus(`${view.nodes.length} result(s) for "${q}"`);
    } catch (err) {
        setStatus(err instanceof Error ? err.message : String(err), true);
    }
    updateBackButton();
}

async function runRandom(): Promise<void> {
    try {
        const view = await api.random(Math.min(state.limits.maxNodes, 15));
        state.loadResult(view, "");
        setStatus("random subgraph loaded");
    } catch (err) {
        setStatus(err instanceof Error ? err.message : String(err), true);
    }
    updateBackButton();
}

function wireEvents(): void {
    canvas.addEventListener("mousedown", (ev) => {
        const hit = nodeAt(ev.offsetX, ev.offsetY);
        if (hit) {
            draggingNode = hit;
        } else {
            panning = true;
        }
        lastMouse = { x: ev.offsetX, y: ev.offsetY };
    });

    canvas.addEventListener("mousemove", async (ev) => {
        if (draggingNode) {
            const world = toWorld(ev.offsetX, ev.offsetY);
            state.dragNode(draggingNode, world.x, world.y);
        } else if (panning) {
            panX += ev.offsetX - lastMouse.x;
            panY += ev.offsetY - lastMouse.y;
        } else {
            const hit = nodeAt(ev.offsetX, ev.offsetY);
            if (hit !== hoverId) {
                hoverId = hit;
                hoverDetail = null;
                if (hit) {
                    try {
                        hoverDetail = await api.node(hit);
                    } catch {
                        hoverDetail = null;
                    }
                }
            }
            const card = document.getElementById("hover-card") as HTMLElement;
            card.style.left = `${ev.offsetX + 14}px`;
            card.style.top = `${ev.offsetY + 14}px`;
        }
        lastMouse = { x: ev.offsetX, y: ev.offsetY };
    });

    canvas.addEventListener("mouseup", () => {
        draggingNode = null;
        panning = false;
    });

    canvas.addEventListener("dblclick", async (ev) => {
        const hit = nodeAt(ev.offsetX, ev.offsetY);
        if (!hit) return;
        const node = state.nodes.get(hit);
        if (!node) return;
        if (node.expanded) {
            state.collapseNode(hit);
        } else {
            await state.expandNode(api, hit);
            if (state.lastError) {
                setStatus(state.lastError, true);
                state.lastError = null;
            }
            if (state.truncated) setStatus("node limit reached; view truncated");
        }
        updateBackButton();
    });

    canvas.addEventListener("wheel", (ev) => {
        ev.preventDefault();
        const factor = ev.deltaY < 0 ? 1.1 : 1 / 1.1;
        scale = Math.min(Math.max(scale * factor, 0.1), 6);
    });

    (document.getElementById("search-form") as HTMLFormElement).addEventListener(
        "submit",
        (ev) => {
            ev.preventDefault();
            void runSearch();
        },
    );
    (document.getElementById("random") as HTMLButtonElement).addEventListener("click", () =>
        void runRandom(),
    );
    (document.getElementById("back") as HTMLButtonElement).addEventListener("click", () => {
        state.navigateBack();
        updateBackButton();
    });

    const bind = (id: string, apply: (value: number) => void) => {
        const input = document.getElementById(id) as HTMLInputElement;
        input.addEventListener("change", () => apply(Number(input.value)));
    };
    bind("set-theta", (v) => (layout.theta = Math.max(0, v)));
    bind("set-damping", (v) => (layout.damping = Math.min(Math.max(v, 0.01), 0.99)));
    bind("set-max-nodes", (v) => (state.limits.maxNodes = Math.max(1, Math.floor(v))));
    bind("set-max-neighbors", (v) =>
        (state.limits.maxNeighborsPerNode = Math.max(1, Math.floor(v))),
    );

    window.addEventListener("resize", fitCanvas);
}

function fitCanvas(): void {
    canvas.width = canvas.clientWidth;
    canvas.height = canvas.clientHeight;
}

async function showStats(): Promise<void> {
    try {
        const stats = await api.stats();
        setStatus(`graph: ${stats.nodes_total} nodes, ${stats.edges_total} edges`);
    } catch {
        setStatus("query service unreachable", true);
    }
}

fitCanvas();
wireEvents();
updateBackButton();
void showStats();
requestAnimationFrame(tick);
