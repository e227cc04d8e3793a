// Typed client for the exploration service. The viewer holds no model
// logic: every displayed vertex comes through this client.

export interface ServiceInfo {
  template: { vertices: number; faces: number; joints: number; shape_dim: number };
  latent_dim: number;
  delta_p95: number;
  motions: number;
}

export interface MotionEntry {
  id: string;
  family: string;
  frames: number;
  frame_rate: number;
}

export interface TemplateMesh {
  vertices: number[][];
  faces: number[][];
}

export interface SessionHandle {
  session_id: string;
  revision: number;
  frames?: number;
}

export interface FramePayload {
  frame: number;
  revision: number;
  vertices: number[];
  delta_magnitude: number[];
}

export class ApiError extends Error {
  constructor(readonly status: number, message: string) {
    super(message);
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(
    private readonly base: string,
    private readonly fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    let resp: Response;
    try {
      resp = await this.fetchFn(this.base + path, init);
    } catch (err) {
      throw new ApiError(0, `service unreachable: ${err}`);
    }
    const body = await resp.json().catch(() => ({}));
    if (!resp.ok) {
      throw new ApiError(resp.status, (body as { error?: string }).error ?? resp.statusText);
    }
    return body as T;
  }

  info(): Promise<ServiceInfo> {
    return this.request("/api/info");
  }

  async motions(): Promise<MotionEntry[]> {
    const body = await this.request<{ motions: MotionEntry[] }>("/api/motions");
    return body.motions;
  }

  templateMesh(): Promise<TemplateMesh> {
    return this.request("/api/mesh/template");
  }

  createSession(beta: number[], motionId: string): Promise<SessionHandle> {
    return this.request("/api/session", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ beta, motion_id: motionId }),
    });
  }

  patchSession(sessionId: string, beta: number[]): Promise<SessionHandle> {
    return this.request(`/api/session/${sessionId}`, {
      method: "PATCH",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ beta }),
    });
  }

  frame(sessionId: string, t: number): Promise<FramePayload> {
    return this.request(`/api/session/${sessionId}/frame/${t}`);
  }
}
