// Browser wiring: canvas scatter + slice heatmap + instruction box.
// All logic lives in the modules under test; this file only touches the DOM.

import { SessionClient } from "./api.js";
import { extractGrammarTokens, suggest } from "./autocomplete.js";
import { buildSlice } from "./render.js";
import { ConsoleController } from "./state.js";

function drawScene(ctl: ConsoleController, canvas: HTMLCanvasElement): void {
    const ctx = canvas.getContext("2d")!;
    ctx.clearRect(0, 0, canvas.width, canvas.height);
    if (!ctl.scene) {
        return;
    }
    for (const d of ctl.scene.draws) {
        ctx.fillStyle = d.color;
        ctx.fillRect(d.x, d.y, d.size, d.size);
    }
}

async function drawSlice(ctl: ConsoleController, client: SessionClient,
    canvas: HTMLCanvasElement): Promise<void> {
    const payload = await client.getSlice(ctl.state.sessionId,
        ctl.state.sliceAxis, ctl.state.sliceIndex);
    const img = buildSlice(payload);
    const ctx = canvas.getContext("2d")!;
    const s = Math.max(1, Math.floor(Math.min(
        canvas.width / Math.max(1, img.width),
        canvas.height / Math.max(1, img.height))));
    ctx.clearRect(0, 0, canvas.width, canvas.height);
    img.cells.forEach((color, i) => {
        if (color !== "") {
            ctx.fillStyle = color;
            ctx.fillRect((i % img.width) * s, Math.floor(i / img.width) * s, s, s);
        }
    });
}

export async function boot(): Promise<void> {
    const base = (document.getElementById("base-url") as HTMLInputElement).value;
    const sid = (document.getElementById("session-id") as HTMLInputElement).value;
    const client = new SessionClient(base);
    const ctl = await ConsoleController.open(client, sid);

    const sceneCanvas = document.getElementById("scene") as HTMLCanvasElement;
    const sliceCanvas = document.getElementById("slice") as HTMLCanvasElement;
    const box = document.getElementById("instruction") as HTMLInputElement;
    const send = document.getElementById("send") as HTMLButtonElement;
    const status = document.getElementById("status") as HTMLElement;
    const hints = document.getElementById("hints") as HTMLElement;

    const grammarTokens = extractGrammarTokens(
        await fetch("./GRAMMAR.md").then((r) => r.text()).catch(() => ""));

    const sync = () => {
        drawScene(ctl, sceneCanvas);
        void drawSlice(ctl, client, sliceCanvas);
        send.disabled = !ctl.canSubmit(box.value);
        const errs = ctl.state.inlineErrors
            .map((e) => `[${e.start}-${e.end}] ${e.message}`).join("; ");
        status.textContent = ctl.state.banner ?? errs ??
            `hash ${ctl.state.hash.slice(0, 12)} · step ${ctl.state.steps}`;
    };

    box.addEventListener("input", () => {
        send.disabled = !ctl.canSubmit(box.value);
        const labelMap = ctl.lastPayload ? ctl.lastPayload.label_map : {};
        hints.textContent = suggest(box.value, box.selectionStart ?? box.value.length,
            grammarTokens, labelMap).join("  ");
    });
    send.addEventListener("click", async () => {
        await ctl.submit(box.value);
        if (ctl.state.pendingText === "") {
            box.value = "";
        }
        sync();
    });

    sync();
}

if (typeof document !== "undefined" && document.getElementById("scene")) {
    void boot();
}
