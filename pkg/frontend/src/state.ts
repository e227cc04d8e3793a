// Viewer state and the playback controller: session lifecycle, slider
// edits, frame scheduling with a single in-flight request, and stale
// response rejection by session revision.

import { ApiClient, ApiError, FramePayload, MotionEntry } from "./api";

export const BETA_MIN = -2.5;
export const BETA_MAX = 2.5;
export const BETA_STEP = 0.1;

export interface ViewerState {
  beta: number[];
  motionId: string | null;
  sessionId: string | null;
  revision: number;
  cursor: number;
  totalFrames: number;
  playing: boolean;
  colormap: boolean;
  betaError: boolean;
  connectionError: string | null;
}

export function clampBeta(values: number[]): number[] {
  return values.map((v) =>
    Math.min(BETA_MAX, Math.max(BETA_MIN, Math.round(v / BETA_STEP) * BETA_STEP)),
  );
}

export class PlaybackController {
  readonly state: ViewerState;
  onFrame: (frame: FramePayload) => void = () => {};
  onStateChange: (state: ViewerState) => void = () => {};
  private inFlight = false;

  constructor(
    private readonly api: ApiClient,
    shapeDim: number,
  ) {
    this.state = {
      beta: new Array(shapeDim).fill(0),
      motionId: null,
      sessionId: null,
      revision: 0,
      cursor: 0,
      totalFrames: 0,
      playing: false,
      colormap: true,
      betaError: false,
      connectionError: null,
    };
  }

  private changed() {
    this.onStateChange(this.state);
  }

  async selectMotion(motion: MotionEntry): Promise<void> {
    this.state.motionId = motion.id;
    this.state.totalFrames = motion.frames;
    await this.recreateSession();
  }

  private async recreateSession(): Promise<void> {
    if (!this.state.motionId) return;
    try {
      const handle = await this.api.createSession(this.state.beta, this.state.motionId);
      this.state.sessionId = handle.session_id;
      this.state.revision = handle.revision;
      this.state.cursor = 0;
      this.state.connectionError = null;
      this.state.betaError = false;
    } catch (err) {
      this.fail(err);
    }
    this.changed();
  }

  // A slider edit issues exactly one PATCH; playback restarts from frame 0
  // so the recurrent state and the on-screen animation stay in step.
  async setBeta(values: number[]): Promise<void> {
    this.state.beta = clampBeta(values);
    if (!this.state.sessionId) {
      this.changed();
      return;
    }
    try {
      const handle = await this.api.patchSession(this.state.sessionId, this.state.beta);
      this.state.revision = handle.revision;
      this.state.cursor = 0;
      this.state.betaError = false;
      this.state.connectionError = null;
    } catch (err) {
      if (err instanceof ApiError && err.status === 422) {
        this.state.betaError = true;
      } else {
        this.fail(err);
      }
    }
    this.changed();
  }

  play(): void {
    this.state.playing = true;
    this.changed();
  }

  pause(): void {
    this.state.playing = false;
    this.changed();
  }

  // One animation tick: request at most one frame, deliver it unless the
  // session moved on (stale revision), then advance the cursor.
  async tick(): Promise<void> {
    if (!this.state.playing || this.inFlight || !this.state.sessionId) return;
    if (this.state.totalFrames === 0) return;
    const target = this.state.cursor % this.state.totalFrames;
    const sessionAtRequest = this.state.sessionId;
    const revisionAtRequest = this.state.revision;
    this.inFlight = true;
    try {
      const frame = await this.api.frame(sessionAtRequest, target);
      const fresh =
        this.state.sessionId === sessionAtRequest &&
        this.state.revision === revisionAtRequest &&
        frame.revision === revisionAtRequest;
      if (fresh) {
        this.state.cursor = target + 1;
        this.state.connectionError = null;
        this.onFrame(frame);
      }
    } catch (err) {
      this.fail(err);
    } finally {
      this.inFlight = false;
    }
    this.changed();
  }

  async retry(): Promise<void> {
    this.state.connectionError = null;
    await this.recreateSession();
  }

  private fail(err: unknown) {
    this.state.connectionError = err instanceof Error ? err.message : String(err);
    this.state.playing = false;
  }
}
