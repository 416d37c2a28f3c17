// Keyboard shortcuts: annotation must take seconds, not clicks.
// Returns a detach function so views can swap handlers cleanly.

export function addKeyboardHandler(callbacks: Record<string, (e: KeyboardEvent) => void>): () => void {
  function handler(e: KeyboardEvent) {
    if (e.altKey || e.ctrlKey || e.metaKey) return;
    const target = e.target as HTMLElement | null;
    if (target && (target instanceof HTMLInputElement || target.isContentEditable)) return;
    const cb = callbacks[e.key];
    if (cb) {
      cb(e);
      e.preventDefault();
    }
  }
  document.addEventListener("keydown", handler);
  return () => document.removeEventListener("keydown", handler);
}
