// Typed client for the annotation service. All bodies are JSON; errors carry
// the HTTP status plus the service's detail payload.

export interface ClassSummary {
  class: string;
  k: number;
  lambda2: number;
  annotated: boolean;
  version: number;
}

export interface ClusterInfo {
  index: number;
  size: number;
}

export interface ClassDetail {
  class: string;
  clusters: ClusterInfo[];
  sample_images: string[];
  eigenvalues: number[];
}

export type Matrix = (number | null)[][];

export interface HeatmapPayload {
  base_scores: Matrix;
  heatmaps: Record<string, Matrix>;
  grid: { rows: number; cols: number };
  image_url?: string;
}

export type Label = "object" | "distractor";

export class ApiError extends Error {
  constructor(
    public status: number,
    public detail: unknown,
  ) {
    super(`service returned ${status}`);
  }

  // best-effort human message out of the service's detail shapes
  get text(): string {
    const d = this.detail as any;
    if (d && typeof d === "object") {
      if (typeof d.message === "string") return d.message;
      if (d.detail) {
        if (typeof d.detail === "string") return d.detail;
        if (typeof d.detail.message === "string") return d.detail.message;
      }
    }
    return this.message;
  }
}

async function request<T>(url: string, init?: RequestInit): Promise<T> {
  const res = await fetch(url, init);
  if (!res.ok) {
    let detail: unknown = null;
    try {
      detail = await res.json();
    } catch {
      /* non-JSON error body */
    }
    throw new ApiError(res.status, detail);
  }
  if (res.status === 204) return undefined as T;
  return (await res.json()) as T;
}

export class Client {
  constructor(private base: string = "") {}

  classes(): Promise<ClassSummary[]> {
    return request(`${this.base}/api/classes`);
  }

  classDetail(classId: string): Promise<ClassDetail> {
    return request(`${this.base}/api/classes/${encodeURIComponent(classId)}`);
  }

  heatmaps(classId: string, imageId: string): Promise<HeatmapPayload> {
    return request(
      `${this.base}/api/classes/${encodeURIComponent(classId)}/images/${encodeURIComponent(imageId)}/heatmaps`,
    );
  }

  postAnnotation(
    classId: string,
    labels: Record<string, Label>,
    annotator: string,
    version: number,
  ): Promise<void> {
    return request(`${this.base}/api/classes/${encodeURIComponent(classId)}/annotation`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ labels, annotator, version }),
    });
  }

  imageUrl(path: string): string {
    return `${this.base}${path}`;
  }
}
