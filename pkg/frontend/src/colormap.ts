// Fixed linear "hot" colormap: 0 -> black, rising through red and yellow to
// 1 -> white. Not configurable so heatmaps stay comparable across clusters.

import type { Matrix } from "./api.js";

function clamp01(x: number): number {
  return x < 0 ? 0 : x > 1 ? 1 : x;
}

export function hotColor(value: number): [number, number, number] {
  const v = clamp01(value);
  return [
    Math.round(255 * clamp01(3 * v)),
    Math.round(255 * clamp01(3 * v - 1)),
    Math.round(255 * clamp01(3 * v - 2)),
  ];
}

// Suppressed (null) cells render as 0: pure black.
export function matrixToRgba(matrix: Matrix, alpha = 255): Uint8ClampedArray {
  const rows = matrix.length;
  const cols = rows ? matrix[0].length : 0;
  const out = new Uint8ClampedArray(rows * cols * 4);
  let o = 0;
  for (let r = 0; r < rows; r++) {
    for (let c = 0; c < cols; c++) {
      const [red, green, blue] = hotColor(matrix[r][c] ?? 0);
      out[o++] = red;
      out[o++] = green;
      out[o++] = blue;
      out[o++] = alpha;
    }
  }
  return out;
}

export function matrixMax(matrix: Matrix): number {
  let mx = 0;
  for (const row of matrix) {
    for (const v of row) {
      if (v !== null && v > mx) mx = v;
    }
  }
  return mx;
}
