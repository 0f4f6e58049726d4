import init, { sensitivity, spectroscopy, noise } from "./pkg/smi_web.js";

const $ = (id) => document.getElementById(id);
const num = (id) => parseFloat($(id).value);

function axes(ctx, w, h) {
  ctx.clearRect(0, 0, w, h);
  ctx.strokeStyle = "#ddd";
  ctx.strokeRect(0.5, 0.5, w - 1, h - 1);
}

function line(ctx, xs, ys, box, color) {
  const [x0, x1, y0, y1] = box;
  const { width: w, height: h } = ctx.canvas;
  ctx.strokeStyle = color;
  ctx.beginPath();
  xs.forEach((x, i) => {
    const px = ((x - x0) / (x1 - x0)) * (w - 20) + 10;
    const py = h - 10 - ((ys[i] - y0) / (y1 - y0)) * (h - 20);
    i ? ctx.lineTo(px, py) : ctx.moveTo(px, py);
  });
  ctx.stroke();
}

function range(...arrays) {
  const all = arrays.flat();
  let lo = Math.min(...all);
  let hi = Math.max(...all);
  if (hi === lo) hi = lo + 1;
  return [lo, hi];
}

function drawMap() {
  const n = 81;
  const m = sensitivity(0.05, 0.3, num("delta"), num("xi"), num("phi"), $("phase").checked, 0.08, n);
  const ds = m.delta_s;
  const ctx = $("map").getContext("2d");
  const { width: w, height: h } = ctx.canvas;
  const logs = Array.from(ds, (v) => Math.log10(Math.max(v, 1e-12)));
  const [lo, hi] = range(logs);
  const cw = w / n;
  const ch = h / n;
  for (let i = 0; i < n; i++) {
    for (let j = 0; j < n; j++) {
      const t = (logs[i * n + j] - lo) / (hi - lo);
      ctx.fillStyle = `hsl(${240 - 240 * t}, 80%, ${25 + 45 * t}%)`;
      ctx.fillRect(j * cw, h - (i + 1) * ch, cw + 1, ch + 1);
    }
  }
  const a2 = m.rejection_a2;
  const al = ((m.rejection_alpha2 % (2 * Math.PI)) + 2 * Math.PI) % (2 * Math.PI);
  ctx.strokeStyle = "#fff";
  ctx.beginPath();
  ctx.arc((al / (2 * Math.PI)) * w, h - (a2 / m.a2_max) * h, 6, 0, 2 * Math.PI);
  ctx.stroke();
  $("map-info").textContent =
    `log10 ΔS from ${lo.toFixed(1)} to ${hi.toFixed(1)}. Horizontal α2 in [0, 2π), vertical a2 in [0, ${m.a2_max}] V. ` +
    `Rejection point a2 = ${a2.toFixed(4)} V, α2 = ${al.toFixed(3)} rad` +
    (a2 > m.a2_max ? " (outside the grid)." : ".");
  m.free();
}

function drawSweep() {
  const span = num("span");
  const curves = [false, true].map((smi) => {
    const flat = spectroscopy(smi, span, 401);
    const f = [], x = [], y = [], a = [];
    for (let k = 0; k < flat.length; k += 3) {
      f.push(flat[k] / 1e3);
      x.push(flat[k + 1]);
      y.push(flat[k + 2]);
      a.push(Math.hypot(flat[k + 1], flat[k + 2]));
    }
    return { f, x, y, a };
  });
  const iq = $("iq").getContext("2d");
  axes(iq, iq.canvas.width, iq.canvas.height);
  const [lo, hi] = range(...curves.flatMap((c) => [c.x, c.y]));
  curves.forEach((c, i) => line(iq, c.x, c.y, [lo, hi, lo, hi], i ? "#c33" : "#36c"));
  const amp = $("amp").getContext("2d");
  axes(amp, amp.canvas.width, amp.canvas.height);
  const [, amax] = range(...curves.map((c) => c.a));
  const [f0, f1] = range(curves[0].f);
  curves.forEach((c, i) => line(amp, c.f, c.a, [f0, f1, 0, amax], i ? "#c33" : "#36c"));
}

function drawNoise() {
  const dt = 0.1;
  const t = noise(BigInt(Math.max(0, Math.round(num("seed")))), num("ap"), num("rts"), num("corner"), 0, 1 << 15, dt);
  const v = t.values;
  const tr = $("trace").getContext("2d");
  axes(tr, tr.canvas.width, tr.canvas.height);
  const step = Math.ceil(v.length / 2000);
  const xs = [], ys = [];
  for (let i = 0; i < v.length; i += step) {
    xs.push(i * dt);
    ys.push(v[i]);
  }
  const [y0, y1] = range(ys);
  line(tr, xs, ys, [0, v.length * dt, y0, y1], "#333");
  const ad = $("adev").getContext("2d");
  axes(ad, ad.canvas.width, ad.canvas.height);
  const lt = Array.from(t.taus, Math.log10);
  const ls = Array.from(t.sigma, Math.log10);
  const [t0, t1] = range(lt);
  const [s0, s1] = range(ls);
  line(ad, lt, ls, [t0, t1, s0 - 0.1, s1 + 0.1], "#393");
  t.free();
}

await init();
$("map-go").onclick = drawMap;
$("sweep-go").onclick = drawSweep;
$("noise-go").onclick = drawNoise;
drawMap();
drawSweep();
drawNoise();
