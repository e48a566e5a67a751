import { CameraPose, Viewport, project } from "./camera.js";
import type { PointcloudPayload, SlicePayload } from "./types.js";

export class SceneError extends Error {}

export interface DrawCall {
    x: number;
    y: number;
    depth: number;
    size: number;
    color: string;
    classId: number;
}

export interface Scene {
    draws: DrawCall[];
    /** classId -> {name, color, count} for every class present in the payload. */
    legend: Map<number, { name: string; color: string; count: number }>;
    hash: string;
    notice: string | null;
}

// Fixed palette for the 13 CoW segment ids; colors must be stable across
// refreshes so the operator can track a segment through the session.
const PALETTE: Record<number, string> = {
    1: "#e6194b", 2: "#3cb44b", 3: "#ffe119", 4: "#4363d8", 5: "#f58231",
    6: "#911eb4", 7: "#46f0f0", 8: "#f032e6", 9: "#bcf60c", 10: "#fabebe",
    11: "#008080", 12: "#e6beff", 13: "#9a6324",
};

export function classColor(classId: number): string {
    const fixed = PALETTE[classId];
    if (fixed) {
        return fixed;
    }
    // golden-angle fallback for non-default label maps
    const hue = (classId * 137.508) % 360;
    return `hsl(${hue.toFixed(1)}, 70%, 55%)`;
}

function checkPayload(payload: PointcloudPayload): void {
    if (!payload || payload.kind !== "pointcloud" || !Array.isArray(payload.points)) {
        throw new SceneError("malformed pointcloud payload");
    }
    for (const p of payload.points) {
        if (!Array.isArray(p) || p.length !== 4 || p.some((v) => typeof v !== "number")) {
            throw new SceneError(`malformed point ${JSON.stringify(p)}`);
        }
    }
}

/**
 * Turn a pointcloud payload into draw calls. Pure in (payload, hiddenClasses,
 * pose, viewport); the caller owns the canvas. One draw call per visible
 * payload point — the e2e suite counts on exact agreement.
 */
export function buildScene(
    payload: PointcloudPayload,
    hiddenClasses: ReadonlySet<number>,
    pose: CameraPose,
    vp: Viewport,
): Scene {
    checkPayload(payload);
    const legend = new Map<number, { name: string; color: string; count: number }>();
    const draws: DrawCall[] = [];
    for (const [x, y, z, cid] of payload.points as [number, number, number, number][]) {
        let entry = legend.get(cid);
        if (!entry) {
            entry = {
                name: payload.label_map[String(cid)] ?? `class ${cid}`,
                color: classColor(cid),
                count: 0,
            };
            legend.set(cid, entry);
        }
        entry.count += 1;
        if (hiddenClasses.has(cid)) {
            continue;
        }
        const pt = project([x, y, z], pose, vp);
        if (pt === null) {
            continue;
        }
        draws.push({
            x: pt.x,
            y: pt.y,
            depth: pt.depth,
            size: Math.max(1, 140 / pt.depth),
            color: entry.color,
            classId: cid,
        });
    }
    draws.sort((a, b) => b.depth - a.depth); // painter's order
    return {
        draws,
        legend,
        hash: payload.hash,
        notice: payload.points.length === 0 ? "no foreground" : null,
    };
}

export interface SliceImage {
    width: number;
    height: number;
    /** row-major cell colors; "" for background. */
    cells: string[];
    hash: string;
}

/** Label slice -> per-cell colors for a canvas heatmap. */
export function buildSlice(payload: SlicePayload): SliceImage {
    if (!payload || payload.kind !== "slice" || !Array.isArray(payload.data)) {
        throw new SceneError("malformed slice payload");
    }
    const height = payload.data.length;
    const width = height > 0 ? payload.data[0]!.length : 0;
    const cells: string[] = [];
    for (const row of payload.data) {
        if (row.length !== width) {
            throw new SceneError("ragged slice rows");
        }
        for (const v of row) {
            cells.push(v === 0 ? "" : classColor(v));
        }
    }
    return { width, height, cells, hash: payload.hash };
}
