// Wire types for the refinement service REST API.

export interface SessionSummary {
    session_id: string;
    hash: string;
    initial_hash: string;
    voxel_counts: Record<string, number>;
    dims: number[];
    spacing: number[];
    steps: number;
    metrics?: MetricsReport;
}

export interface MetricsReport {
    macro_dice: number;
    detection_f1: number;
    micro_f1: number;
    nsd_tau_mm: number;
    per_class: Record<string, { dice: number; nsd: number }>;
    [key: string]: unknown;
}

export interface ClauseOutcome {
    status: "ok" | "error" | "parse_error";
    command?: Record<string, unknown>;
    message?: string;
    clause_index?: number;
    start?: number;
    end?: number;
}

export interface StepResult {
    step: number;
    commands: Record<string, unknown>[];
    outcomes: ClauseOutcome[];
    changed_voxels: number;
    hash: string;
    metrics: MetricsReport | null;
}

export interface PointcloudPayload {
    kind: "pointcloud";
    /** [x, y, z, classId] per point. */
    points: number[][];
    hash: string;
    label_map: Record<string, string>;
}

export interface SlicePayload {
    kind: "slice";
    axis: "x" | "y" | "z";
    index: number;
    data: number[][];
    hash: string;
}

export interface HistoryStep {
    instruction: string;
    outcomes: ClauseOutcome[];
    hash: string;
    changed_voxels: number;
}

export interface HistoryResponse {
    session_id: string;
    hash: string;
    steps: HistoryStep[];
}
