import { ApiClient } from "./api";
import { colormap, flatColor } from "./colormap";
import { MeshRenderer } from "./render";
import { BETA_MAX, BETA_MIN, BETA_STEP, PlaybackController } from "./state";

const SERVICE_URL = (window as unknown as { SOFTDYN_URL?: string }).SOFTDYN_URL
  ?? "http://127.0.0.1:8787";

async function boot() {
  const api = new ApiClient(SERVICE_URL);
  const banner = document.getElementById("banner") as HTMLDivElement;
  const slidersDiv = document.getElementById("sliders") as HTMLDivElement;
  const motionSelect = document.getElementById("motion") as HTMLSelectElement;
  const playButton = document.getElementById("play") as HTMLButtonElement;
  const colormapToggle = document.getElementById("colormap") as HTMLInputElement;
  const canvas = document.getElementById("view") as HTMLCanvasElement;

  let info;
  let motions;
  let mesh;
  try {
    info = await api.info();
    motions = await api.motions();
    mesh = await api.templateMesh();
  } catch (err) {
    banner.textContent = `service unreachable — ${err}. Retry?`;
    banner.style.display = "block";
    banner.onclick = () => location.reload();
    return;
  }

  const renderer = new MeshRenderer(canvas);
  renderer.setTopology(mesh.faces);
  const controller = new PlaybackController(api, info.template.shape_dim);
  const deltaMax = info.delta_p95 > 0 ? info.delta_p95 : 0.05;

  motions.forEach((m) => {
    const opt = document.createElement("option");
    opt.value = m.id;
    opt.textContent = `${m.id} (${m.family}, ${m.frames}f)`;
    motionSelect.appendChild(opt);
  });
  motionSelect.onchange = async () => {
    const motion = motions.find((m) => m.id === motionSelect.value);
    if (motion) {
      await controller.selectMotion(motion);
      controller.play();
    }
  };

  const sliders: HTMLInputElement[] = [];
  for (let i = 0; i < info.template.shape_dim; i++) {
    const row = document.createElement("div");
    row.className = "slider-row";
    const label = document.createElement("label");
    label.textContent = `β${i + 1}`;
    const slider = document.createElement("input");
    slider.type = "range";
    slider.min = String(BETA_MIN);
    slider.max = String(BETA_MAX);
    slider.step = String(BETA_STEP);
    slider.value = "0";
    slider.onchange = () => {
      void controller.setBeta(sliders.map((s) => Number(s.value)));
    };
    row.appendChild(label);
    row.appendChild(slider);
    slidersDiv.appendChild(row);
    sliders.push(slider);
  }

  playButton.onclick = () => {
    if (controller.state.playing) {
      controller.pause();
      playButton.textContent = "play";
    } else {
      controller.play();
      playButton.textContent = "pause";
    }
  };
  colormapToggle.onchange = () => {
    controller.state.colormap = colormapToggle.checked;
  };

  controller.onStateChange = (state) => {
    banner.style.display = state.connectionError ? "block" : "none";
    if (state.connectionError) {
      banner.textContent = `service error — ${state.connectionError}. Click to retry.`;
      banner.onclick = () => void controller.retry();
    }
    slidersDiv.classList.toggle("invalid", state.betaError);
  };

  const positions = new Float32Array(info.template.vertices * 3);
  const colors = new Float32Array(info.template.vertices * 3);
  controller.onFrame = (frame) => {
    positions.set(frame.vertices);
    for (let v = 0; v < frame.delta_magnitude.length; v++) {
      const rgb = controller.state.colormap
        ? colormap(frame.delta_magnitude[v], deltaMax)
        : flatColor();
      colors[3 * v] = rgb[0];
      colors[3 * v + 1] = rgb[1];
      colors[3 * v + 2] = rgb[2];
    }
    renderer.draw(positions, colors);
  };

  const first = motions[0];
  if (first) {
    motionSelect.value = first.id;
    await controller.selectMotion(first);
    controller.play();
    playButton.textContent = "pause";
  }

  const frameRate = first ? first.frame_rate : 30;
  setInterval(() => void controller.tick(), 1000 / frameRate);
}

void boot();
