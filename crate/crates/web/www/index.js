import init, { fsn_json, Scene, energy_json } from "./pkg/fsnet_web.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

function show(id, f) {
  const el = $(id);
  try {
    el.className = "";
    el.textContent = f();
  } catch (e) {
    el.className = "err";
    el.textContent = String(e.message ?? e);
  }
}

function fsn() {
  const spikes = $("fsn-spikes");
  spikes.innerHTML = "";
  show("fsn-out", () => {
    const v = JSON.parse(fsn_json(num("fsn-value"), num("fsn-alpha"), num("fsn-k")));
    v.spikes.forEach((s, i) => {
      const span = document.createElement("span");
      span.textContent = v.thresholds[i].toPrecision(3);
      if (s) span.className = "on";
      spikes.appendChild(span);
    });
    return `decoded ${v.decoded}\nrange [${v.x_min}, ${v.x_max}]\nquantization error ${v.error.toExponential(3)}`;
  });
}

function scene() {
  show("sc-out", () => {
    const s = new Scene($("sc-kind").value, BigInt(num("sc-seed")), num("sc-vel"), num("sc-noise"), 48);
    try {
      for (const ch of ["st", "s", "t"]) {
        const cv = $("cv-" + ch);
        cv.width = s.width();
        cv.height = s.height();
        const img = new ImageData(new Uint8ClampedArray(s.rgba(ch)), s.width(), s.height());
        cv.getContext("2d").putImageData(img, 0, 0);
      }
      return JSON.stringify(JSON.parse(s.stats_json()), null, 1);
    } finally {
      s.free();
    }
  });
}

function energy() {
  show("en-out", () => {
    const exp = $("en-exp").value === "" ? -1 : num("en-exp");
    const v = JSON.parse(energy_json($("en-model").value, num("en-op"), num("en-rate"), num("en-k"), exp));
    const lines = [
      `ANN ${v.ann_mj.toFixed(4)} mJ`,
      `LIF ${v.lif_mj.toFixed(4)} mJ`,
      `FSN ${v.fsn_mj.toFixed(4)} mJ`,
    ];
    if (v.rel_err !== null) lines.push(`vs reference: ${(100 * v.rel_err).toFixed(2)}% (${v.verdict})`);
    return lines.join("\n");
  });
}

await init();
for (const [ids, f] of [
  [["fsn-value", "fsn-alpha", "fsn-k"], fsn],
  [["sc-kind", "sc-seed", "sc-vel", "sc-noise"], scene],
  [["en-model", "en-op", "en-rate", "en-k", "en-exp"], energy],
]) {
  ids.forEach((id) => $(id).addEventListener("input", f));
  f();
}
