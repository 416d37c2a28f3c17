// jsdom has no 2d canvas without the native `canvas` package; paintCell
// already guards the null context, so drop the noisy not-implemented logs.
const originalError = console.error;
console.error = (...args: unknown[]) => {
  if (String(args[0]).includes("Not implemented: HTMLCanvasElement")) return;
  originalError(...args);
};
