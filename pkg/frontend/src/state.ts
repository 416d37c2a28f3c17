// Annotation view state: one OBJECT/DISTRACTOR toggle per cluster column.
// The label map is only available once every column is toggled, mirroring the
// service's completeness rule so a partial body can never leave the client.

import type { ClassSummary, Label } from "./api.js";

export class AnnotationState {
  private toggles: (Label | null)[];
  focused = 0;

  constructor(public readonly k: number) {
    this.toggles = new Array(k).fill(null);
  }

  label(column: number): Label | null {
    return this.toggles[column];
  }

  set(column: number, label: Label): void {
    if (column < 0 || column >= this.k) return;
    this.toggles[column] = label;
  }

  focusNext(): void {
    this.focused = Math.min(this.k - 1, this.focused + 1);
  }

  focusPrev(): void {
    this.focused = Math.max(0, this.focused - 1);
  }

  get complete(): boolean {
    return this.toggles.every((t) => t !== null);
  }

  get missing(): number[] {
    return this.toggles.flatMap((t, i) => (t === null ? [i] : []));
  }

  // throws when incomplete; callers must gate on `complete` first
  labelMap(): Record<string, Label> {
    if (!this.complete) throw new Error("label map is incomplete");
    const out: Record<string, Label> = {};
    this.toggles.forEach((t, i) => {
      out[String(i)] = t as Label;
    });
    return out;
  }
}

export function nextPending(classes: ClassSummary[], after: string): string | null {
  const start = classes.findIndex((c) => c.class === after);
  for (let step = 1; step <= classes.length; step++) {
    const entry = classes[(start + step) % classes.length];
    if (!entry.annotated && entry.class !== after) return entry.class;
  }
  return null;
}
