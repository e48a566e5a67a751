// Orbit camera: yaw/pitch around a target point, perspective projection.

export interface CameraPose {
    yaw: number; // radians around +z
    pitch: number; // radians above the xy plane
    distance: number; // eye distance from target, voxels
    target: [number, number, number];
}

export interface Viewport {
    width: number;
    height: number;
}

export function defaultCamera(dims: number[]): CameraPose {
    const [dx = 1, dy = 1, dz = 1] = dims;
    return {
        yaw: Math.PI / 4,
        pitch: Math.PI / 6,
        distance: 2.2 * Math.max(dx, dy, dz),
        target: [dx / 2, dy / 2, dz / 2],
    };
}

/**
 * Project a voxel coordinate to viewport pixels. Returns null for points
 * behind the eye. Pure: same pose + point => same result.
 */
export function project(
    p: [number, number, number],
    pose: CameraPose,
    vp: Viewport,
): { x: number; y: number; depth: number } | null {
    const cx = p[0] - pose.target[0];
    const cy = p[1] - pose.target[1];
    const cz = p[2] - pose.target[2];

    const cosY = Math.cos(pose.yaw), sinY = Math.sin(pose.yaw);
    const cosP = Math.cos(pose.pitch), sinP = Math.sin(pose.pitch);
    // yaw about z, then pitch about the new x axis
    const rx = cx * cosY - cy * sinY;
    const ry = cx * sinY + cy * cosY;
    const vy = ry * cosP - cz * sinP;
    const vz = ry * sinP + cz * cosP;

    const depth = pose.distance - vy;
    if (depth <= 1e-6) {
        return null;
    }
    const f = (0.8 * Math.min(vp.width, vp.height)) / depth;
    return {
        x: vp.width / 2 + rx * f,
        y: vp.height / 2 - vz * f,
        depth,
    };
}
