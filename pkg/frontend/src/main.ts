// Single-page app: class list ordered by the service, per-class annotation
// grid, keyboard-first labeling. At most one annotation POST is in flight.

import { ApiError, Client, type ClassDetail, type ClassSummary, type HeatmapPayload, type Label } from "./api.js";
import { addKeyboardHandler } from "./keyboard.js";
import { renderAnnotationView, renderClassList, renderErrorBanner, type ViewHandlers } from "./render.js";
import { AnnotationState, nextPending } from "./state.js";

export class App {
  classes: ClassSummary[] = [];
  state: AnnotationState | null = null;
  detail: ClassDetail | null = null;
  payloads: [string, HeatmapPayload][] = [];
  version = 0;
  error: string | null = null;
  annotator = "annotator";
  private detachKeys: (() => void) | null = null;
  private posting = false;

  constructor(
    private root: HTMLElement,
    private client: Client,
  ) {}

  async showList(): Promise<void> {
    this.teardownKeys();
    this.detail = null;
    try {
      this.classes = await this.client.classes();
    } catch (err) {
      renderErrorBanner(this.root, `cannot reach the annotation service: ${String(err)}`, () => {
        void this.showList();
      });
      return;
    }
    renderClassList(this.root, this.classes, (classId) => {
      void this.openClass(classId);
    });
  }

  async openClass(classId: string): Promise<void> {
    this.teardownKeys();
    try {
      const detail = await this.client.classDetail(classId);
      const payloads: [string, HeatmapPayload][] = [];
      for (const imageId of detail.sample_images.slice(0, 12)) {
        payloads.push([imageId, await this.client.heatmaps(classId, imageId)]);
      }
      this.detail = detail;
      this.payloads = payloads;
      this.state = new AnnotationState(detail.clusters.length);
      this.version = this.classes.find((c) => c.class === classId)?.version ?? 0;
      this.error = null;
    } catch (err) {
      renderErrorBanner(this.root, `cannot load class ${classId}: ${String(err)}`, () => {
        void this.showList();
      });
      return;
    }
    this.renderView();
    this.detachKeys = addKeyboardHandler({
      o: () => this.toggleFocused("object"),
      d: () => this.toggleFocused("distractor"),
      Enter: () => void this.submit(),
      ArrowRight: () => {
        this.state?.focusNext();
        this.renderView();
      },
      ArrowLeft: () => {
        this.state?.focusPrev();
        this.renderView();
      },
      Escape: () => void this.showList(),
    });
  }

  private toggleFocused(label: Label): void {
    if (!this.state) return;
    this.state.set(this.state.focused, label);
    this.state.focusNext();
    this.renderView();
  }

  toggle(column: number, label: Label): void {
    if (!this.state) return;
    this.state.set(column, label);
    this.state.focused = column;
    this.renderView();
  }

  async submit(): Promise<void> {
    if (!this.state || !this.detail || this.posting) return;
    if (!this.state.complete) return; // the gate mirrors the service invariant
    this.posting = true;
    const classId = this.detail.class;
    try {
      await this.client.postAnnotation(classId, this.state.labelMap(), this.annotator, this.version);
      this.error = null;
      this.classes = await this.client.classes();
      const next = nextPending(this.classes, classId);
      if (next) {
        await this.openClass(next);
      } else {
        await this.showList();
      }
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) {
        const detail = err.detail as any;
        const current = detail?.detail?.current_version;
        if (typeof current === "number") this.version = current;
        this.error = `someone annotated ${classId} concurrently; review and press Enter to retry`;
      } else if (err instanceof ApiError && err.status === 422) {
        this.error = `service rejected the annotation: ${err.text}`;
      } else {
        this.error = `submit failed: ${String(err)}`;
      }
      this.renderView();
    } finally {
      this.posting = false;
    }
  }

  renderView(): void {
    if (!this.detail || !this.state) return;
    const handlers: ViewHandlers = {
      onToggle: (col, label) => this.toggle(col, label),
      onSubmit: () => void this.submit(),
      onBack: () => void this.showList(),
      imageUrl: (path) => this.client.imageUrl(path),
    };
    renderAnnotationView(this.root, this.detail, this.payloads, this.state, this.error, handlers);
  }

  private teardownKeys(): void {
    if (this.detachKeys) {
      this.detachKeys();
      this.detachKeys = null;
    }
  }
}

export function boot(root: HTMLElement, base = ""): App {
  const app = new App(root, new Client(base));
  void app.showList();
  return app;
}

declare global {
  interface Window {
    dforgeBoot: typeof boot;
  }
}

if (typeof window !== "undefined") {
  window.dforgeBoot = boot;
  const mount = document.getElementById("app");
  if (mount) boot(mount);
}
