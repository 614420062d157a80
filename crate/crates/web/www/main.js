import init, { categories, synth_trace, diagnose_trace, format_hint } from "./pkg/failscope_web.js";

const $ = (id) => document.getElementById(id);
let report = null;

function show(err) {
  $("status").textContent = err ? String(err.message ?? err) : "";
}

function renderHint() {
  const budget = Number($("budget").value);
  $("budget-label").textContent = `${budget} tokens`;
  if (!report) return;
  try {
    const hint = JSON.parse(format_hint(report, budget));
    $("hint").textContent = hint.text;
    $("budget-label").textContent = `${budget} tokens (uses ${hint.token_estimate})`;
    show(null);
  } catch (e) {
    show(e);
  }
}

function diagnose() {
  try {
    const out = JSON.parse(diagnose_trace($("trace").value));
    report = JSON.stringify(out.report);
    $("summary").textContent = out.summary;
    renderHint();
    show(null);
  } catch (e) {
    report = null;
    $("summary").textContent = "";
    $("hint").textContent = "";
    show(e);
  }
}

function generate() {
  try {
    $("trace").value = synth_trace($("category").value, Number($("seed").value) >>> 0);
    diagnose();
  } catch (e) {
    show(e);
  }
}

await init();
for (const name of categories()) {
  const opt = document.createElement("option");
  opt.value = opt.textContent = name;
  $("category").append(opt);
}
$("synth").addEventListener("click", generate);
$("diagnose").addEventListener("click", diagnose);
$("budget").addEventListener("input", renderHint);
generate();
