import { beforeEach, describe, expect, it } from "vitest";
import { ApiClient } from "../src/api";
import { PlaybackController, clampBeta } from "../src/state";

interface LoggedRequest {
  method: string;
  path: string;
  body?: unknown;
}

/** In-memory stand-in for the service, mirroring its session semantics. */
class MockService {
  log: LoggedRequest[] = [];
  revision = 0;
  sessions = 0;
  failBeta = false;
  down = false;
  frames = 6;

  fetchFn = async (input: string, init?: RequestInit): Promise<Response> => {
    const path = input.replace(/^https?:\/\/[^/]+/, "");
    const method = init?.method ?? "GET";
    const body = init?.body ? JSON.parse(init.body as string) : undefined;
    this.log.push({ method, path, body });
    if (this.down) throw new TypeError("fetch failed");

    const json = (status: number, payload: unknown) =>
      new Response(JSON.stringify(payload), { status });

    if (path === "/api/session" && method === "POST") {
      if (this.failBeta) return json(422, { error: "beta must be 10 finite numbers" });
      this.sessions += 1;
      this.revision = 0;
      return json(200, { session_id: `s${this.sessions}`, revision: 0, frames: this.frames });
    }
    const patch = path.match(/^\/api\/session\/([^/]+)$/);
    if (patch && method === "PATCH") {
      if (this.failBeta) return json(422, { error: "beta must be 10 finite numbers" });
      this.revision += 1;
      return json(200, { session_id: patch[1], revision: this.revision });
    }
    const frame = path.match(/^\/api\/session\/([^/]+)\/frame\/(\d+)$/);
    if (frame && method === "GET") {
      return json(200, {
        frame: Number(frame[2]),
        revision: this.revision,
        vertices: [0, 0, 0],
        delta_magnitude: [0],
      });
    }
    return json(404, { error: `no route ${path}` });
  };

  frameRequests(): string[] {
    return this.log
      .filter((r) => r.path.includes("/frame/"))
      .map((r) => r.path.split("/frame/")[1]);
  }

  patchCount(): number {
    return this.log.filter((r) => r.method === "PATCH").length;
  }
}

const MOTION = { id: "m0", family: "walk", frames: 6, frame_rate: 60 };

describe("PlaybackController", () => {
  let mock: MockService;
  let controller: PlaybackController;

  beforeEach(async () => {
    mock = new MockService();
    controller = new PlaybackController(new ApiClient("http://test", mock.fetchFn), 10);
    await controller.selectMotion(MOTION);
  });

  it("slider edit sends exactly one PATCH and restarts frames at 0", async () => {
    controller.play();
    await controller.tick(); // frame 0
    await controller.tick(); // frame 1
    await controller.tick(); // frame 2
    mock.log = [];
    await controller.setBeta([-1.5, 0, 0, 0, 0, 0, 0, 0, 0, 0]);
    await controller.tick();
    await controller.tick();
    expect(mock.patchCount()).toBe(1);
    expect(mock.frameRequests()).toEqual(["0", "1"]);
  });

  it("pause and resume produce no duplicate frame requests", async () => {
    controller.play();
    await controller.tick();
    await controller.tick();
    controller.pause();
    await controller.tick(); // paused: no request
    await controller.tick();
    controller.play();
    await controller.tick();
    expect(mock.frameRequests()).toEqual(["0", "1", "2"]);
  });

  it("only one request is in flight at a time", async () => {
    controller.play();
    const a = controller.tick();
    const b = controller.tick(); // coalesced away while the first is pending
    await Promise.all([a, b]);
    expect(mock.frameRequests()).toEqual(["0"]);
  });

  it("stale responses from a superseded revision are discarded", async () => {
    controller.play();
    let release: () => void = () => {};
    const gate = new Promise<void>((resolve) => (release = resolve));
    const realFetch = mock.fetchFn;
    let delayed = false;
    const gatedFetch = async (input: string, init?: RequestInit) => {
      if (input.includes("/frame/") && !delayed) {
        delayed = true;
        await gate;
      }
      return realFetch(input, init);
    };
    const slowController = new PlaybackController(
      new ApiClient("http://test", gatedFetch), 10);
    await slowController.selectMotion(MOTION);
    const frames: number[] = [];
    slowController.onFrame = (f) => frames.push(f.frame);
    slowController.play();
    const pending = slowController.tick(); // frame 0 request now gated
    await slowController.setBeta([1, 0, 0, 0, 0, 0, 0, 0, 0, 0]); // bumps revision
    release();
    await pending;
    expect(frames).toEqual([]); // the gated frame-0 response was stale
    await slowController.tick();
    expect(frames).toEqual([0]); // playback restarted cleanly
  });

  it("playback wraps around the sequence", async () => {
    controller.play();
    for (let i = 0; i < 8; i++) await controller.tick();
    expect(mock.frameRequests()).toEqual(["0", "1", "2", "3", "4", "5", "0", "1"]);
  });

  it("422 marks the sliders invalid without killing the session", async () => {
    mock.failBeta = true;
    await controller.setBeta([9, 0, 0, 0, 0, 0, 0, 0, 0, 0]);
    expect(controller.state.betaError).toBe(true);
    expect(controller.state.connectionError).toBeNull();
  });

  it("unreachable service raises the banner state", async () => {
    mock.down = true;
    await controller.setBeta([1, 0, 0, 0, 0, 0, 0, 0, 0, 0]);
    expect(controller.state.connectionError).toContain("unreachable");
    expect(controller.state.playing).toBe(false);
  });

  it("motion change recreates the session", async () => {
    const before = mock.sessions;
    await controller.selectMotion({ ...MOTION, id: "m1" });
    expect(mock.sessions).toBe(before + 1);
    expect(controller.state.cursor).toBe(0);
  });
});

describe("clampBeta", () => {
  it("clamps into the slider range on the step grid", () => {
    expect(clampBeta([-9, 9, 0.24])).toEqual([-2.5, 2.5, 0.2]);
  });
});
