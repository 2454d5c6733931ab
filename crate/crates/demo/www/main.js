import init, { simulate, fit, random_effect } from "./pkg/comet_demo.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

function simRequest() {
  return {
    side: num("side"), true_rank: num("true_rank"), rho: num("rho"), tau2: num("tau2"),
    n: num("n"), m: num("m"), seed: num("seed"),
  };
}

// Grid values are column-major; cell (i, j) is drawn at row i, column j.
function heatmap(id, grid, mask) {
  const c = $(id), ctx = c.getContext("2d");
  const s = grid.side, w = c.width / s, h = c.height / s;
  const max = Math.max(1e-12, ...grid.values.map(Math.abs));
  ctx.clearRect(0, 0, c.width, c.height);
  for (let j = 0; j < s; j++) {
    for (let i = 0; i < s; i++) {
      const idx = i + s * j;
      let v = grid.values[idx] / max;
      if (mask) v = mask[idx] ? Math.sign(grid.values[idx]) || 1 : 0;
      const a = Math.round(255 * (1 - Math.abs(v)));
      ctx.fillStyle = v >= 0 ? `rgb(255,${a},${a})` : `rgb(${a},${a},255)`;
      ctx.fillRect(j * w, i * h, Math.ceil(w), Math.ceil(h));
    }
  }
}

function trace(id, values) {
  const c = $(id), ctx = c.getContext("2d");
  ctx.clearRect(0, 0, c.width, c.height);
  if (!values.length) return;
  const lo = Math.min(...values), hi = Math.max(...values), span = hi - lo || 1;
  ctx.strokeStyle = "#236";
  ctx.beginPath();
  values.forEach((v, t) => {
    const x = (t / Math.max(1, values.length - 1)) * c.width;
    const y = c.height - ((v - lo) / span) * (c.height - 4) - 2;
    t ? ctx.lineTo(x, y) : ctx.moveTo(x, y);
  });
  ctx.stroke();
}

function run(label, f) {
  $("status").textContent = `${label}...`;
  // Let the status paint before the blocking call.
  setTimeout(() => {
    try {
      f();
      $("status").textContent = "";
    } catch (e) {
      $("status").textContent = String(e);
    }
  }, 10);
}

$("simulate").onclick = () => run("simulating", () => {
  const r = JSON.parse(simulate(JSON.stringify(simRequest())));
  heatmap("truth", r.truth);
  const ys = r.responses;
  const mean = ys.reduce((a, b) => a + b, 0) / ys.length;
  $("scores").textContent =
    `${ys.length} responses, mean ${mean.toFixed(3)}; ${r.support.filter(Boolean).length} nonzero cells`;
});

$("fit").onclick = () => run("sampling", () => {
  const req = {
    sim: simRequest(), rank: num("rank"), k: num("k"), iters: num("iters"),
    burnin: num("burnin"), seed: num("seed"), level: num("level"),
  };
  const t0 = performance.now();
  const r = JSON.parse(fit(JSON.stringify(req)));
  const secs = (performance.now() - t0) / 1000;
  heatmap("truth", r.truth);
  heatmap("median", r.median);
  heatmap("selected", r.median, r.s2m);
  trace("trace", r.tau2);
  $("scores").textContent = [
    `RMSE ${r.rmse.toFixed(4)}`,
    `F1 s2m ${r.f1_s2m.toFixed(3)}, F1 interval ${r.f1_ci.toFixed(3)}`,
    `test coverage ${r.coverage.toFixed(3)}, mean width ${r.width.toFixed(3)}`,
    `${secs.toFixed(1)} s`,
  ].join("\n");
});

$("effect").onclick = () => run("drawing", () => {
  const req = { side: num("side"), rho: num("rho"), tau2: num("tau2"), seed: num("seed") };
  const r = JSON.parse(random_effect(JSON.stringify(req)));
  heatmap("sigma", r.sigma);
  heatmap("draw", r.effect);
  $("seed").value = num("seed") + 1;
});

await init();
$("simulate").click();
