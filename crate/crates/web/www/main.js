import init, { Demo, tolerance_schedule, indicator_threshold } from "./pkg/gpe_web.js";

const $ = (id) => document.getElementById(id);

await init();

const canvas = $("density");
const ctx = canvas.getContext("2d");
let demo = null;
let running = false;
let seed = 1;

function build() {
  if (demo) demo.free();
  demo = new Demo(Number($("n").value), Number($("omega").value), Number($("kappa").value), BigInt(seed));
  canvas.width = canvas.height = demo.n();
  draw();
}

function draw() {
  const n = demo.n();
  ctx.putImageData(new ImageData(new Uint8ClampedArray(demo.density_rgba()), n, n), 0, 0);
  const state = demo.done() ? "done" : running ? "running" : "paused";
  $("status").textContent =
    `k = ${demo.iterations()}  E = ${demo.energy().toFixed(10)}  |g| = ${demo.gnorm().toExponential(2)}  ${state}`;
}

function frame() {
  if (!running) return;
  try {
    if (demo.step(5)) running = false;
  } catch (e) {
    running = false;
    $("status").textContent = `error: ${e.message}`;
    return;
  }
  draw();
  requestAnimationFrame(frame);
}

for (const id of ["omega", "kappa"]) {
  $(id).addEventListener("input", () => ($(`${id}-v`).textContent = $(id).value));
  $(id).addEventListener("change", () => { running = false; build(); });
}
$("n").addEventListener("change", () => { running = false; build(); });

$("run").onclick = () => {
  if (!running && !demo.done()) {
    running = true;
    requestAnimationFrame(frame);
  }
};
$("pause").onclick = () => { running = false; draw(); };
$("reseed").onclick = () => {
  running = false;
  seed += 1;
  demo.reset(BigInt(seed));
  draw();
};

$("check").onclick = () => {
  const e = demo.indicator(Number($("factor").value));
  const ok = e < indicator_threshold();
  $("indicator").textContent = `indicator ${e.toExponential(3)} -> ${ok ? "accept" : "reject"} (threshold ${indicator_threshold()})`;
};

$("sched").onclick = () => {
  try {
    const s = tolerance_schedule(Number($("smin").value), Number($("smax").value), Number($("sm").value));
    $("schedule").textContent = Array.from(s, (v, j) => `${j + 1}: ${v.toExponential(4)}`).join("  ");
  } catch (e) {
    $("schedule").textContent = `error: ${e.message}`;
  }
};

build();
