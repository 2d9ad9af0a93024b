/** Quadtree over 2D points with per-cell center of mass, for Barnes-Hut. */

export interface Body {
    x: number;
    y: number;
    index: number;
}

/** Cells smaller than this hold their bodies in a flat bucket instead of
 * splitting further, so near-coincident points cannot recurse forever. */
const MIN_CELL_SIZE = 1e-9;

export class QuadNode {
    // square cell [x0, x0+size) x [y0, y0+size)
    children: (QuadNode | null)[] = [null, null, null, null];
    body: Body | null = null; // set iff leaf with exactly one body
    bucket: Body[] | null = null; // bodies of a minimum-size cell
    mass = 0;
    comX = 0; // center of mass
    comY = 0;

    constructor(
        public x0: number,
        public y0: number,
        public size: number,
    ) {}

    get isLeaf(): boolean {
        return this.children.every((c) => c === null);
    }

    private quadrant(b: Body): number {
        const midX = this.x0 + this.size / 2;
        const midY = this.y0 + this.size / 2;
        return (b.x >= midX ? 1 : 0) + (b.y >= midY ? 2 : 0);
    }

    private childFor(b: Body): QuadNode {
        const q = this.quadrant(b);
        if (this.children[q] === null) {
            const half = this.size / 2;
            this.children[q] = new QuadNode(
                this.x0 + (q & 1 ? half : 0),
                this.y0 + (q & 2 ? half : 0),
                half,
            );
        }
        return this.children[q] as QuadNode;
    }

    insert(b: Body): void {
        if (this.bucket !== null) {
            this.bucket.push(b);
        } else if (this.mass === 0) {
            this.body = b;
        } else if (this.size < MIN_CELL_SIZE) {
            this.bucket = this.body !== null ? [this.body, b] : [b];
            this.body = null;
        } else if (this.body !== null) {
            // split: push the resident body down, then insert the new one
            const resident = this.body;
            this.body = null;
            this.childFor(resident).insert(resident);
            this.childFor(b).insert(b);
        } else {
            this.childFor(b).insert(b);
        }
        // incremental center of mass
        this.comX = (this.comX * this.mass + b.x) / (this.mass + 1);
        this.comY = (this.comY * this.mass + b.y) / (this.mass + 1);
        this.mass += 1;
    }

    /** True when the target point lies inside this cell's bounds. */
    contains(x: number, y: number): boolean {
        return (
            x >= this.x0 && x < this.x0 + this.size && y >= this.y0 && y < this.y0 + this.size
        );
    }
}

export function buildQuadtree(bodies: Body[]): QuadNode | null {
    if (bodies.length === 0) return null;
    let minX = Infinity;
    let minY = Infinity;
    let maxX = -Infinity;
    let maxY = -Infinity;
    for (const b of bodies) {
        minX = Math.min(minX, b.x);
        minY = Math.min(minY, b.y);
        maxX = Math.max(maxX, b.x);
        maxY = Math.max(maxY, b.y);
    }
    const size = Math.max(maxX - minX, maxY - minY, 1e-9) * (1 + 1e-12);
    const root = new QuadNode(minX, minY, size);
    for (const b of bodies) root.insert(b);
    return root;
}
