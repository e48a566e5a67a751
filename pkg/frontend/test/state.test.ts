import { describe, expect, it } from "vitest";

import { ApiError, SessionClient } from "../src/api.js";
import { ConsoleController } from "../src/state.js";
import type { PointcloudPayload, SessionSummary, StepResult } from "../src/types.js";

function summary(hash = "h0"): SessionSummary {
    return {
        session_id: "sid", hash, initial_hash: "h0",
        voxel_counts: { "7": 100 }, dims: [32, 32, 32],
        spacing: [1, 1, 1], steps: 0,
    };
}

function cloud(hash: string, points: number[][] = [[1, 1, 1, 7]]): PointcloudPayload {
    return { kind: "pointcloud", points, hash, label_map: { "7": "L-MCA" } };
}

interface FakeOpts {
    instruction?: () => Promise<StepResult>;
    pointcloudHash?: () => string;
}

function fakeClient(opts: FakeOpts = {}): SessionClient {
    const fake = {
        getSession: async () => summary(),
        getHistory: async () => ({ session_id: "sid", hash: "h0", steps: [] }),
        getPointcloud: async () => cloud(opts.pointcloudHash ? opts.pointcloudHash() : "h0"),
        postInstruction: opts.instruction ?? (async () => {
            throw new Error("unexpected postInstruction");
        }),
        rollback: async (_sid: string, step: number) => ({ ...summary("h1"), steps: step + 1 }),
    };
    return fake as unknown as SessionClient;
}

const okStep = (hash: string): StepResult => ({
    step: 0,
    commands: [{ action: "Thin", segment_id: 7 }],
    outcomes: [{ status: "ok" }],
    changed_voxels: 42,
    hash,
    metrics: {
        macro_dice: 0.97, detection_f1: 1, micro_f1: 1,
        nsd_tau_mm: 1, per_class: {},
    },
});

describe("ConsoleController", () => {
    it("opens with the server summary and an initial scene", async () => {
        const ctl = await ConsoleController.open(fakeClient(), "sid");
        expect(ctl.state.hash).toBe("h0");
        expect(ctl.scene!.draws).toHaveLength(1);
    });

    it("disables submit when busy or empty", async () => {
        const ctl = await ConsoleController.open(fakeClient(), "sid");
        expect(ctl.canSubmit("")).toBe(false);
        expect(ctl.canSubmit("  ")).toBe(false);
        ctl.state.busy = true;
        expect(ctl.canSubmit("Thin the BA by a factor of 1.2.")).toBe(false);
    });

    it("appends a timeline entry and clears the box on success", async () => {
        let hash = "h0";
        const ctl = await ConsoleController.open(fakeClient({
            instruction: async () => {
                hash = "h1";
                return okStep("h1");
            },
            pointcloudHash: () => hash,
        }), "sid");
        const ok = await ctl.submit("Thin the L-MCA by a factor of 1.2.");
        expect(ok).toBe(true);
        expect(ctl.state.timeline).toHaveLength(1);
        expect(ctl.state.timeline[0]!.macroDice).toBe(0.97);
        expect(ctl.state.hash).toBe("h1");
        expect(ctl.state.pendingText).toBe("");
        expect(ctl.state.diverged).toBe(false);
    });

    it("keeps the input and shows offsets on a 422", async () => {
        const ctl = await ConsoleController.open(fakeClient({
            instruction: async () => {
                throw new ApiError(422, {
                    outcomes: [{
                        status: "parse_error", start: 0, end: 9,
                        message: "unknown action verb 'perforate'",
                    }],
                    hash: "h0",
                });
            },
        }), "sid");
        const ok = await ctl.submit("Perforate the BA.");
        expect(ok).toBe(false);
        expect(ctl.state.pendingText).toBe("Perforate the BA.");
        expect(ctl.state.inlineErrors).toEqual([
            { start: 0, end: 9, message: "unknown action verb 'perforate'" },
        ]);
        expect(ctl.state.hash).toBe("h0");
        expect(ctl.state.timeline).toHaveLength(0);
        expect(ctl.state.diverged).toBe(false);
    });

    it("flags divergence when the refetched view disagrees with the mutation", async () => {
        const ctl = await ConsoleController.open(fakeClient({
            instruction: async () => okStep("h1"),
            pointcloudHash: () => "h0", // stale view
        }), "sid");
        await ctl.submit("Thin the L-MCA by a factor of 1.2.");
        expect(ctl.state.diverged).toBe(true);
        expect(ctl.state.banner).toMatch(/diverged/);
    });

    it("surfaces network failures with a retry affordance", async () => {
        const ctl = await ConsoleController.open(fakeClient({
            instruction: async () => {
                throw new Error("ECONNREFUSED");
            },
        }), "sid");
        const ok = await ctl.submit("Thin the BA by a factor of 1.2.");
        expect(ok).toBe(false);
        expect(ctl.state.banner).toMatch(/submit failed/);
        expect(ctl.state.pendingText).toBe("Thin the BA by a factor of 1.2.");
        expect(ctl.state.busy).toBe(false);
    });

    it("rollback truncates the timeline; current step is a no-op", async () => {
        let hash = "h0";
        const ctl = await ConsoleController.open(fakeClient({
            instruction: async () => {
                hash = "h1";
                return okStep("h1");
            },
            pointcloudHash: () => hash,
        }), "sid");
        await ctl.submit("Thin the L-MCA by a factor of 1.2.");
        await ctl.rollbackTo(0); // current step -> no server call
        expect(ctl.state.notice).toMatch(/already at step 0/);
        expect(ctl.state.timeline).toHaveLength(1);
    });

    it("toggling a class rebuilds the scene from the cached payload", async () => {
        const pts = [[1, 1, 1, 7], [2, 2, 2, 7], [3, 3, 3, 2]];
        const fake = fakeClient();
        (fake as unknown as { getPointcloud: () => Promise<PointcloudPayload> })
            .getPointcloud = async () => cloud("h0", pts);
        const ctl = await ConsoleController.open(fake, "sid");
        expect(ctl.scene!.draws).toHaveLength(3);
        ctl.toggleClass(7);
        expect(ctl.scene!.draws).toHaveLength(1);
        ctl.toggleClass(7);
        expect(ctl.scene!.draws).toHaveLength(3);
    });
});
