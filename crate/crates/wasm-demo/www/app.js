import init, { deviationView, previewCorrection, refitRmse, studentTVar } from "./pkg/pivotfit_wasm.js";

const $ = (id) => document.getElementById(id);
const state = { view: null, pivots: [] };
const DAY = 86400000;

function fail(e) {
  $("error").textContent = String(e && e.message ? e.message : e);
}

function params() {
  return { seed: Number($("seed").value) >>> 0, amplitude: Number($("amplitude").value), window: Number($("window").value) };
}

function dayIndex(date) {
  return Math.round((Date.parse(date) - Date.parse(state.view.dates[0])) / DAY);
}

function dateAt(index) {
  return new Date(Date.parse(state.view.dates[0]) + index * DAY).toISOString().slice(0, 10);
}

function scales(canvas, values) {
  const lo = Math.min(...values), hi = Math.max(...values);
  const pad = 0.1 * (hi - lo || 1);
  const n = state.view.dates.length;
  return {
    x: (i) => 30 + (i / (n - 1)) * (canvas.width - 40),
    y: (v) => canvas.height - 20 - ((v - lo + pad) / (hi - lo + 2 * pad)) * (canvas.height - 30),
    i: (px) => Math.round(((px - 30) / (canvas.width - 40)) * (n - 1)),
    v: (py) => lo - pad + ((canvas.height - 20 - py) / (canvas.height - 30)) * (hi - lo + 2 * pad),
  };
}

function line(ctx, xs, ys, color) {
  ctx.strokeStyle = color;
  ctx.beginPath();
  xs.forEach((x, k) => (k ? ctx.lineTo(x, ys[k]) : ctx.moveTo(x, ys[k])));
  ctx.stroke();
}

function draw() {
  const canvas = $("chart"), ctx = canvas.getContext("2d");
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  if (!state.view) return;
  const dev = state.view.deviation;
  const s = scales(canvas, dev);
  ctx.strokeStyle = "#ddd";
  line(ctx, [30, canvas.width - 10], [s.y(0), s.y(0)], "#ddd");
  line(ctx, dev.map((_, i) => s.x(i)), dev.map(s.y), "#888");
  if (state.pivots.length) {
    const preview = JSON.parse(previewCorrection(JSON.stringify(state.pivots), state.view.dates[0], dev.length));
    ctx.lineWidth = 2;
    line(ctx, preview.map((_, i) => s.x(i)), preview.map(s.y), "#e67e22");
    ctx.lineWidth = 1;
    ctx.fillStyle = "#c0392b";
    for (const p of state.pivots) {
      ctx.beginPath();
      ctx.arc(s.x(dayIndex(p.date)), s.y(p.value), 4, 0, 2 * Math.PI);
      ctx.fill();
    }
  }
}

function setPivots(pivots) {
  state.pivots = [...pivots].sort((a, b) => a.date.localeCompare(b.date));
  $("refit-out").textContent = "pivots changed, refit to update";
  draw();
}

function generate() {
  try {
    const p = params();
    state.view = JSON.parse(deviationView(p.seed, p.amplitude, p.window));
    state.pivots = [];
    $("refit-out").textContent = "no refit yet";
    $("error").textContent = "";
    draw();
  } catch (e) {
    fail(e);
  }
}

function onChartClick(ev) {
  if (!state.view) return;
  const canvas = $("chart"), rect = canvas.getBoundingClientRect();
  const px = ((ev.clientX - rect.left) * canvas.width) / rect.width;
  const py = ((ev.clientY - rect.top) * canvas.height) / rect.height;
  const s = scales(canvas, state.view.deviation);
  const i = Math.min(Math.max(s.i(px), 0), state.view.dates.length - 1);
  if (ev.shiftKey) {
    if (!state.pivots.length) return;
    const nearest = state.pivots.reduce((best, p) =>
      Math.abs(dayIndex(p.date) - i) < Math.abs(dayIndex(best.date) - i) ? p : best);
    setPivots(state.pivots.filter((p) => p !== nearest));
    return;
  }
  const date = dateAt(i);
  setPivots([...state.pivots.filter((p) => p.date !== date), { date, value: Number(s.v(py).toFixed(4)) }]);
}

function refit() {
  if (!state.view || !state.pivots.length) {
    $("refit-out").textContent = "add at least one pivot first";
    return;
  }
  try {
    const p = params();
    const r = JSON.parse(refitRmse(p.seed, p.amplitude, JSON.stringify(state.pivots)));
    const drop = 100 * (1 - r.rmse_corrected / r.rmse_base);
    $("refit-out").textContent =
      `lambda ${r.lambda}  rmse base ${r.rmse_base.toFixed(1)}  corrected ${r.rmse_corrected.toFixed(1)}  ` +
      `(${drop.toFixed(1)}% lower)  expert coef ${r.expert_coef.toFixed(4)}`;
    $("error").textContent = "";
  } catch (e) {
    fail(e);
  }
}

function updateVar() {
  const sigma = Number($("sigma").value), nu = Number($("nu").value), level = Number($("level").value);
  $("sigma-v").textContent = sigma.toFixed(2);
  $("nu-v").textContent = nu.toFixed(1);
  $("level-v").textContent = level.toFixed(3);
  try {
    const v = JSON.parse(studentTVar(sigma, nu, level, 20000, 7));
    const canvas = $("cdf"), ctx = canvas.getContext("2d");
    ctx.clearRect(0, 0, canvas.width, canvas.height);
    const lo = v.cdf[0], hi = v.cdf[v.cdf.length - 1];
    const x = (q) => 30 + ((q - lo) / (hi - lo)) * (canvas.width - 40);
    const y = (p) => canvas.height - 20 - p * (canvas.height - 30);
    line(ctx, v.cdf.map(x), v.cdf.map((_, k) => y(k / (v.cdf.length - 1))), "#2c3e50");
    line(ctx, [x(v.log_quantile), x(v.log_quantile)], [y(0), y(1)], "#c0392b");
    line(ctx, [30, canvas.width - 10], [y(level), y(level)], "#e67e22");
    $("var-out").textContent =
      `VaR ${(100 * level).toFixed(1)}%: log return ${v.log_quantile.toFixed(4)}, ` +
      `price change ${(100 * v.price_quantile).toFixed(2)}%`;
  } catch (e) {
    fail(e);
  }
}

await init();
$("generate").onclick = generate;
$("suggested").onclick = () => state.view && setPivots(state.view.suggested);
$("oracle").onclick = () => state.view && setPivots(state.view.oracle);
$("clear").onclick = () => setPivots([]);
$("refit").onclick = refit;
$("chart").onclick = onChartClick;
for (const id of ["sigma", "nu", "level"]) $(id).oninput = updateVar;
generate();
updateVar();
