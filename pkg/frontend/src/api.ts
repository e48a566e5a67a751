import type {
    HistoryResponse,
    PointcloudPayload,
    SessionSummary,
    SlicePayload,
    StepResult,
} from "./types.js";

export type FetchLike = (
    url: string,
    init?: { method?: string; headers?: Record<string, string>; body?: string },
) => Promise<{ status: number; json(): Promise<unknown> }>;

/** Non-2xx response. `body` carries the parsed JSON (e.g. clause outcomes on 422). */
export class ApiError extends Error {
    constructor(
        public status: number,
        public body: unknown,
    ) {
        super(`HTTP ${status}: ${JSON.stringify(body)}`);
    }
}

async function unwrap<T>(res: { status: number; json(): Promise<unknown> }): Promise<T> {
    const body = await res.json().catch(() => null);
    if (res.status < 200 || res.status >= 300) {
        throw new ApiError(res.status, body);
    }
    return body as T;
}

/**
 * Thin client for the session service. Every volume mutation goes through
 * here; the console never edits voxels locally.
 */
export class SessionClient {
    constructor(
        private baseUrl: string,
        private fetchImpl: FetchLike = fetch as unknown as FetchLike,
    ) {
        this.baseUrl = baseUrl.replace(/\/$/, "");
    }

    private post<T>(path: string, body: unknown): Promise<T> {
        return this.fetchImpl(this.baseUrl + path, {
            method: "POST",
            headers: { "content-type": "application/json" },
            body: JSON.stringify(body),
        }).then((r) => unwrap<T>(r));
    }

    private get<T>(path: string): Promise<T> {
        return this.fetchImpl(this.baseUrl + path).then((r) => unwrap<T>(r));
    }

    createSession(body: {
        volume_path: string;
        gt_path?: string;
        centerlines_path?: string;
    }): Promise<SessionSummary> {
        return this.post("/sessions", body);
    }

    getSession(sid: string): Promise<SessionSummary> {
        return this.get(`/sessions/${sid}`);
    }

    postInstruction(sid: string, text: string): Promise<StepResult> {
        return this.post(`/sessions/${sid}/instructions`, { text });
    }

    getPointcloud(sid: string, stride = 1): Promise<PointcloudPayload> {
        return this.get(`/sessions/${sid}/view?kind=pointcloud&stride=${stride}`);
    }

    getSlice(sid: string, axis: "x" | "y" | "z", index: number): Promise<SlicePayload> {
        return this.get(`/sessions/${sid}/view?kind=slice&axis=${axis}&index=${index}`);
    }

    getMetrics(sid: string): Promise<{ hash: string; report: Record<string, unknown> }> {
        return this.get(`/sessions/${sid}/metrics`);
    }

    rollback(sid: string, step: number): Promise<SessionSummary> {
        return this.post(`/sessions/${sid}/rollback`, { step });
    }

    getHistory(sid: string): Promise<HistoryResponse> {
        return this.get(`/sessions/${sid}/history`);
    }
}
