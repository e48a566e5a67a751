import { ApiError, SessionClient } from "./api.js";
import { CameraPose, defaultCamera } from "./camera.js";
import { Scene, buildScene } from "./render.js";
import type {
    ClauseOutcome,
    MetricsReport,
    PointcloudPayload,
    SessionSummary,
} from "./types.js";

export interface TimelineEntry {
    step: number;
    instruction: string;
    hash: string;
    changedVoxels: number;
    macroDice: number | null;
}

export interface InlineError {
    start: number;
    end: number;
    message: string;
}

/**
 * All console state. The scene derives only from the last fetched payload
 * plus the class toggles; `hash` always mirrors the server's last report.
 */
export interface ViewState {
    sessionId: string;
    hash: string;
    initialHash: string;
    steps: number;
    pendingText: string;
    busy: boolean;
    hiddenClasses: Set<number>;
    camera: CameraPose;
    sliceAxis: "x" | "y" | "z";
    sliceIndex: number;
    timeline: TimelineEntry[];
    inlineErrors: InlineError[];
    banner: string | null;
    notice: string | null;
    /** true iff a refetched view ever disagreed with the mutation's hash */
    diverged: boolean;
}

const VIEWPORT = { width: 960, height: 640 };

export class ConsoleController {
    state: ViewState;
    scene: Scene | null = null;
    lastPayload: PointcloudPayload | null = null;

    constructor(
        private client: SessionClient,
        summary: SessionSummary,
    ) {
        this.state = {
            sessionId: summary.session_id,
            hash: summary.hash,
            initialHash: summary.initial_hash,
            steps: summary.steps,
            pendingText: "",
            busy: false,
            hiddenClasses: new Set(),
            camera: defaultCamera(summary.dims),
            sliceAxis: "z",
            sliceIndex: 0,
            timeline: [],
            inlineErrors: [],
            banner: null,
            notice: null,
            diverged: false,
        };
    }

    static async open(client: SessionClient, sid: string): Promise<ConsoleController> {
        const ctl = new ConsoleController(client, await client.getSession(sid));
        const history = await client.getHistory(sid);
        ctl.state.timeline = history.steps.map((s, i) => ({
            step: i,
            instruction: s.instruction,
            hash: s.hash,
            changedVoxels: s.changed_voxels,
            macroDice: null,
        }));
        await ctl.refreshScene();
        return ctl;
    }

    canSubmit(text = this.state.pendingText): boolean {
        return !this.state.busy && text.trim().length > 0;
    }

    /** Refetch the pointcloud and rebuild the scene; flags hash divergence. */
    async refreshScene(expectedHash?: string): Promise<void> {
        try {
            const payload = await this.client.getPointcloud(this.state.sessionId);
            if (expectedHash !== undefined && payload.hash !== expectedHash) {
                this.state.diverged = true;
                this.state.banner = "server state diverged from last mutation";
            }
            this.lastPayload = payload;
            this.state.hash = payload.hash;
            this.scene = buildScene(payload, this.state.hiddenClasses,
                this.state.camera, VIEWPORT);
            this.state.notice = this.scene.notice;
        } catch (e) {
            // keep the previous scene on a bad payload or fetch failure
            this.state.banner = `view refresh failed: ${(e as Error).message}`;
        }
    }

    async submit(text: string): Promise<boolean> {
        if (!this.canSubmit(text)) {
            return false;
        }
        this.state.busy = true;
        this.state.banner = null;
        try {
            const result = await this.client.postInstruction(this.state.sessionId, text);
            this.state.hash = result.hash;
            this.state.steps = result.step + 1;
            this.state.timeline.push({
                step: result.step,
                instruction: text,
                hash: result.hash,
                changedVoxels: result.changed_voxels,
                macroDice: result.metrics ? result.metrics.macro_dice : null,
            });
            this.state.inlineErrors = clauseErrors(result.outcomes);
            this.state.pendingText = "";
            await this.refreshScene(result.hash);
            return true;
        } catch (e) {
            if (e instanceof ApiError && e.status === 422) {
                // nothing applied: show clause errors, keep the input box
                const body = e.body as { outcomes?: ClauseOutcome[]; hash?: string };
                this.state.inlineErrors = clauseErrors(body.outcomes ?? []);
                if (body.hash !== undefined && body.hash !== this.state.hash) {
                    this.state.diverged = true;
                }
                this.state.pendingText = text;
            } else {
                this.state.banner = `submit failed: ${(e as Error).message}`;
                this.state.pendingText = text; // retry affordance
            }
            return false;
        } finally {
            this.state.busy = false;
        }
    }

    async rollbackTo(step: number): Promise<void> {
        if (step === this.state.steps - 1) {
            this.state.notice = `already at step ${step}`;
            return;
        }
        this.state.busy = true;
        try {
            const summary = await this.client.rollback(this.state.sessionId, step);
            this.state.hash = summary.hash;
            this.state.steps = summary.steps;
            this.state.timeline = this.state.timeline.slice(0, step + 1);
            await this.refreshScene(summary.hash);
        } catch (e) {
            this.state.banner = `rollback failed: ${(e as Error).message}`;
        } finally {
            this.state.busy = false;
        }
    }

    /** Toggle a class locally; rebuilds from the cached payload, no refetch. */
    toggleClass(classId: number): void {
        if (this.state.hiddenClasses.has(classId)) {
            this.state.hiddenClasses.delete(classId);
        } else {
            this.state.hiddenClasses.add(classId);
        }
        if (this.lastPayload) {
            this.scene = buildScene(this.lastPayload, this.state.hiddenClasses,
                this.state.camera, VIEWPORT);
        }
    }

    metricsTrend(): (number | null)[] {
        return this.state.timeline.map((t) => t.macroDice);
    }
}

function clauseErrors(outcomes: ClauseOutcome[]): InlineError[] {
    const errs: InlineError[] = [];
    for (const o of outcomes) {
        if (o.status !== "ok" && o.message !== undefined) {
            errs.push({ start: o.start ?? 0, end: o.end ?? 0, message: o.message });
        }
    }
    return errs;
}
