import { ApiClient } from "./api.js";
import { colorFor, strokeColors } from "./overlay.js";
import { SketchSession } from "./session.js";
import { RecognizeResponse } from "./types.js";

/** Browser entry point: binds the session controller to the page. */

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

export function mount(baseUrl = "", userId = "default"): SketchSession {
  const canvas = el<HTMLCanvasElement>("pad");
  const ctx = canvas.getContext("2d")!;
  const cards = el<HTMLDivElement>("cards");
  const legend = el<HTMLDivElement>("legend");
  const status = el<HTMLDivElement>("status");
  const retryBadge = el<HTMLButtonElement>("retry");
  const adaptBtn = el<HTMLButtonElement>("adapt");
  const otherBtn = el<HTMLButtonElement>("other");
  const clearBtn = el<HTMLButtonElement>("clear");

  const api = new ApiClient(baseUrl);
  const session = new SketchSession(api, userId);

  function redraw(res: RecognizeResponse | null): void {
    ctx.clearRect(0, 0, canvas.width, canvas.height);
    ctx.lineWidth = 3;
    ctx.lineCap = "round";
    ctx.lineJoin = "round";
    const colors = res ? strokeColors(res) : [];
    session.snapshot().strokes.forEach((stroke, i) => {
      ctx.strokeStyle = colors[i] ?? "#222";
      ctx.beginPath();
      stroke.points.forEach((p, j) => (j ? ctx.lineTo(p.x, p.y) : ctx.moveTo(p.x, p.y)));
      ctx.stroke();
    });
  }

  function renderCards(res: RecognizeResponse | null): void {
    cards.replaceChildren();
    if (!res) return;
    res.topk.forEach((entry, i) => {
      const card = document.createElement("button");
      card.className = "card";
      card.textContent = `${entry.name}  ${(entry.probability * 100).toFixed(1)}%`;
      card.addEventListener("click", () => {
        void session.selectCandidate(i).then(
          () => (status.textContent = `recorded: ${entry.name}`),
          (err) => (status.textContent = String(err)),
        );
      });
      cards.appendChild(card);
    });
  }

  session.onUpdate((state) => {
    redraw(state.response);
    renderCards(state.response);
    retryBadge.hidden = state.error === null;
    adaptBtn.disabled = state.adapting;
    const bits = [];
    if (state.pending) bits.push("recognizing...");
    if (state.adapting) bits.push("adapting...");
    if (state.modelVersion !== null) bits.push(`model v${state.modelVersion}`);
    if (state.error) bits.push(`error: ${state.error}`);
    status.textContent = bits.join("  ");
  });

  // pointer events cover mouse, touch and pen alike
  canvas.addEventListener("pointerdown", (e) => {
    canvas.setPointerCapture(e.pointerId);
    session.beginStroke(e.offsetX, e.offsetY, e.timeStamp);
  });
  canvas.addEventListener("pointermove", (e) => {
    if (e.buttons) {
      session.extendStroke(e.offsetX, e.offsetY, e.timeStamp);
      redraw(session.snapshot().response);
    }
  });
  canvas.addEventListener("pointerup", () => session.endStroke());

  retryBadge.addEventListener("click", () => void session.retry());
  clearBtn.addEventListener("click", () => session.clear());
  otherBtn.addEventListener("click", () => {
    void session.markOther().then(
      () => (status.textContent = "recorded: other"),
      (err) => (status.textContent = String(err)),
    );
  });
  adaptBtn.addEventListener("click", () => {
    void session.triggerAdapt().then(
      (v) => (status.textContent = `adapted to v${v}`),
      (err) => (status.textContent = String(err)),
    );
  });

  // legend from the served label metadata; placeholder glyphs only
  void session.modelInfo().then((info) => {
    legend.replaceChildren();
    for (const [id, name] of Object.entries(info.labels.components)) {
      const item = document.createElement("span");
      item.className = "legend-item";
      const swatch = document.createElement("span");
      swatch.className = "swatch";
      swatch.style.background = colorFor(Number(id));
      item.append(swatch, ` ${name}`);
      legend.appendChild(item);
    }
  });

  return session;
}

declare global {
  interface Window {
    sketchSession?: SketchSession;
  }
}

if (typeof document !== "undefined" && document.getElementById("pad")) {
  window.sketchSession = mount();
}
