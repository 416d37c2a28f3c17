// DOM construction. Rendering is pure in the fetched payload: no randomness,
// no client-side re-sorting (the service already orders classes by lambda_2).

import type { ClassDetail, ClassSummary, HeatmapPayload, Label, Matrix } from "./api.js";
import { hotColor, matrixMax } from "./colormap.js";
import { AnnotationState } from "./state.js";

export const CELL_SCALE = 8; // canvas pixels per grid cell
const LABELS: Label[] = ["object", "distractor"];

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

export function paintCell(canvas: HTMLCanvasElement, matrix: Matrix, imageUrl?: string): void {
  const rows = matrix.length;
  const cols = rows ? matrix[0].length : 0;
  canvas.width = cols * CELL_SCALE;
  canvas.height = rows * CELL_SCALE;
  // inputs recorded as data attributes so headless tests can assert painting
  canvas.dataset.rows = String(rows);
  canvas.dataset.cols = String(cols);
  canvas.dataset.max = matrixMax(matrix).toFixed(4);
  const ctx = canvas.getContext("2d");
  if (!ctx) return; // environments without 2d canvas still get the attributes

  const drawHeat = (alpha: number) => {
    ctx.globalAlpha = alpha;
    for (let r = 0; r < rows; r++) {
      for (let c = 0; c < cols; c++) {
        const [red, green, blue] = hotColor(matrix[r][c] ?? 0);
        ctx.fillStyle = `rgb(${red},${green},${blue})`;
        ctx.fillRect(c * CELL_SCALE, r * CELL_SCALE, CELL_SCALE, CELL_SCALE);
      }
    }
    ctx.globalAlpha = 1;
  };

  if (imageUrl) {
    const img = new Image();
    img.onload = () => {
      ctx.drawImage(img, 0, 0, canvas.width, canvas.height);
      drawHeat(0.6); // overlay on the photo at 60% opacity
    };
    img.src = imageUrl;
  }
  drawHeat(1);
}

export function renderErrorBanner(root: HTMLElement, message: string, onRetry: () => void): void {
  root.replaceChildren();
  const banner = el("div", "error-banner");
  banner.append(el("span", "error-text", message));
  const retry = el("button", "retry", "Retry");
  retry.addEventListener("click", onRetry);
  banner.append(retry);
  root.append(banner);
}

export function renderClassList(
  root: HTMLElement,
  classes: ClassSummary[],
  onSelect: (classId: string) => void,
): void {
  root.replaceChildren();
  const view = el("div", "class-list");
  view.append(el("h1", undefined, "Classes by distractor evidence"));
  if (!classes.length) {
    view.append(el("p", "empty-state", "No clustered classes yet. Run the pipeline first."));
    root.append(view);
    return;
  }
  const list = el("ul");
  for (const entry of classes) {
    const row = el("li", "class-row");
    row.dataset.class = entry.class;
    const open = el("button", "open-class", entry.class);
    open.addEventListener("click", () => onSelect(entry.class));
    row.append(open);
    row.append(el("span", "lambda", `lambda2 = ${entry.lambda2.toExponential(3)}`));
    row.append(el("span", "k", `${entry.k} clusters`));
    row.append(
      el("span", entry.annotated ? "badge done" : "badge pending", entry.annotated ? "done" : "pending"),
    );
    list.append(row);
  }
  view.append(list);
  root.append(view);
}

export interface ViewHandlers {
  onToggle: (column: number, label: Label) => void;
  onSubmit: () => void;
  onBack: () => void;
  imageUrl: (path: string) => string;
}

export function renderAnnotationView(
  root: HTMLElement,
  detail: ClassDetail,
  payloads: [string, HeatmapPayload][],
  state: AnnotationState,
  error: string | null,
  handlers: ViewHandlers,
): void {
  root.replaceChildren();
  const view = el("div", "annotation-view");

  const header = el("div", "view-header");
  const back = el("button", "back", "< classes");
  back.addEventListener("click", handlers.onBack);
  header.append(back);
  header.append(el("h1", undefined, detail.class));
  header.append(
    el("p", "hint", "o = object, d = distractor for the focused column; Enter submits"),
  );
  view.append(header);

  const table = el("table", "heatmap-grid");
  const thead = el("thead");
  const headRow = el("tr");
  headRow.append(el("th", undefined, "image"));
  detail.clusters.forEach((cl, col) => {
    const th = el("th", col === state.focused ? "cluster-col focused" : "cluster-col");
    th.dataset.column = String(col);
    th.append(el("div", "cluster-name", `cluster ${cl.index} (${cl.size})`));
    const toggles = el("div", "toggles");
    for (const label of LABELS) {
      const btn = el(
        "button",
        state.label(col) === label ? `toggle ${label} selected` : `toggle ${label}`,
        label.toUpperCase(),
      );
      btn.dataset.column = String(col);
      btn.dataset.label = label;
      btn.addEventListener("click", () => handlers.onToggle(col, label));
      toggles.append(btn);
    }
    th.append(toggles);
    headRow.append(th);
  });
  thead.append(headRow);
  table.append(thead);

  const tbody = el("tbody");
  for (const [imageId, payload] of payloads) {
    const tr = el("tr", "image-row");
    tr.dataset.image = imageId;
    tr.append(el("td", "image-id", imageId));
    detail.clusters.forEach((cl) => {
      const td = el("td", "heatmap-cell");
      const canvas = el("canvas", "heatmap-canvas");
      canvas.dataset.cluster = String(cl.index);
      canvas.dataset.image = imageId;
      paintCell(
        canvas,
        payload.heatmaps[String(cl.index)] ?? [],
        payload.image_url ? handlers.imageUrl(payload.image_url) : undefined,
      );
      td.append(canvas);
      tr.append(td);
    });
    tbody.append(tr);
  }
  table.append(tbody);
  view.append(table);

  const footer = el("div", "view-footer");
  const submit = el("button", "submit", "Submit annotation");
  submit.disabled = !state.complete;
  submit.addEventListener("click", handlers.onSubmit);
  footer.append(submit);
  if (!state.complete) {
    footer.append(
      el("span", "submit-hint", `label cluster ${state.missing.map(String).join(", ")} first`),
    );
  }
  if (error) {
    footer.append(el("div", "inline-error", error));
  }
  view.append(footer);
  root.append(view);
}
