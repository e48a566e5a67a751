// End-to-end against a real fixture server: create a session over a
// disconnected phantom, bridge the cut from the console, roll back.

import { ChildProcess, execFileSync, spawn } from "node:child_process";
import { mkdtempSync, readFileSync, rmSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";

import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { SessionClient } from "../src/api.js";
import { ConsoleController } from "../src/state.js";

const PORT = 20000 + Math.floor(Math.random() * 10000);
const BASE = `http://127.0.0.1:${PORT}`;

let server: ChildProcess;
let fixtureDir: string;
let bridgeText: string;

async function waitForServer(): Promise<void> {
    const deadline = Date.now() + 30_000;
    for (;;) {
        try {
            await fetch(`${BASE}/sessions/probe`); // any response means "up"
            return;
        } catch {
            if (Date.now() > deadline) {
                throw new Error("fixture server did not come up");
            }
            await new Promise((r) => setTimeout(r, 200));
        }
    }
}

beforeAll(async () => {
    fixtureDir = mkdtempSync(join(tmpdir(), "console-e2e-"));
    execFileSync("python3", [join(__dirname, "fixtures", "make_fixture.py"), fixtureDir]);
    bridgeText = JSON.parse(
        readFileSync(join(fixtureDir, "meta.json"), "utf8")).instruction;
    server = spawn("python3", [
        "-c",
        `from vesselforge.service import serve; serve("127.0.0.1:${PORT}")`,
    ], { stdio: "ignore" });
    await waitForServer();
});

afterAll(() => {
    server?.kill();
    rmSync(fixtureDir, { recursive: true, force: true });
});

describe("console against the fixture server", () => {
    it("bridges the gap, tracks metrics, and rolls back to the initial hash", async () => {
        const client = new SessionClient(BASE);
        const summary = await client.createSession({
            volume_path: join(fixtureDir, "cor.rawl.json"),
            gt_path: join(fixtureDir, "gt.rawl.json"),
            centerlines_path: join(fixtureDir, "cl.json"),
        });
        const preDice = summary.metrics!.macro_dice;
        expect(preDice).toBeLessThan(1);

        // step 0: an empty instruction is a recorded no-op, anchoring the
        // initial state in the history so rollback can reach it
        const noop = await client.postInstruction(summary.session_id, "");
        expect(noop.changed_voxels).toBe(0);
        expect(noop.hash).toBe(summary.initial_hash);

        const ctl = await ConsoleController.open(client, summary.session_id);
        expect(ctl.scene!.draws.length).toBe(ctl.lastPayload!.points.length);
        const preCount = ctl.lastPayload!.points.length;

        expect(bridgeText).toMatch(/[Bb]ridge/);
        const ok = await ctl.submit(bridgeText);
        expect(ok).toBe(true);
        expect(ctl.state.diverged).toBe(false);
        expect(ctl.state.timeline).toHaveLength(2);
        expect(ctl.state.timeline[1]!.macroDice!).toBeGreaterThan(preDice);
        // scene refreshed from the new server state
        expect(ctl.scene!.hash).toBe(ctl.state.hash);
        expect(ctl.state.hash).not.toBe(summary.initial_hash);
        expect(ctl.scene!.draws.length).toBe(ctl.lastPayload!.points.length);
        expect(ctl.lastPayload!.points.length).not.toBe(preCount);

        await ctl.rollbackTo(0);
        expect(ctl.state.hash).toBe(summary.initial_hash);
        expect(ctl.state.timeline).toHaveLength(1);
        expect(ctl.state.diverged).toBe(false);
        expect(ctl.scene!.hash).toBe(summary.initial_hash);
    });

    it("surfaces clause errors inline without clearing the input", async () => {
        const client = new SessionClient(BASE);
        const summary = await client.createSession({
            volume_path: join(fixtureDir, "cor.rawl.json"),
        });
        const ctl = await ConsoleController.open(client, summary.session_id);
        const ok = await ctl.submit("Perforate the L-MCA.");
        expect(ok).toBe(false);
        expect(ctl.state.pendingText).toBe("Perforate the L-MCA.");
        expect(ctl.state.inlineErrors).toHaveLength(1);
        expect(ctl.state.inlineErrors[0]!.message).toMatch(/unknown action verb/);
        expect(ctl.state.hash).toBe(summary.initial_hash);
    });
});
