import init, { example_program, check_program, run_service, gd_trace } from './pkg/zoo_web.js';

const $ = (id) => document.getElementById(id);

function call(f, ...args) {
  try {
    return { ok: JSON.parse(f(...args)) };
  } catch (e) {
    return { err: JSON.parse(e) };
  }
}

function showError(el, err) {
  el.className = 'err';
  el.textContent = err.line ? `line ${err.line}, col ${err.col}: ${err.message}` : err.message;
}

function check() {
  const table = $('bindings');
  const status = $('check-status');
  const select = $('binding');
  table.replaceChildren();
  const { ok, err } = call(check_program, $('src').value);
  if (err) {
    showError(status, err);
    return;
  }
  status.className = 'ok';
  status.textContent = `${ok.bindings.length} bindings, all well typed`;
  const previous = select.value;
  select.replaceChildren();
  const head = table.insertRow();
  for (const h of ['name', 'kind', 'type']) head.insertCell().outerHTML = `<th>${h}</th>`;
  for (const b of ok.bindings) {
    const row = table.insertRow();
    row.insertCell().textContent = b.name;
    row.insertCell().textContent = b.kind;
    row.insertCell().textContent = b.type ?? b.value;
    if (b.runnable) select.add(new Option(`${b.name} : ${b.type}`, b.name));
  }
  if ([...select.options].some((o) => o.value === previous)) select.value = previous;
  else if ([...select.options].some((o) => o.value === 's')) select.value = 's';
}

function run() {
  const out = $('run-out');
  const { ok, err } = call(run_service, $('src').value, $('binding').value, $('inputs').value);
  if (err) return showError(out, err);
  out.className = 'ok';
  out.textContent = `${ok.display}  (${ok.type})`;
}

function plot(objective, trace) {
  const c = $('plot');
  const g = c.getContext('2d');
  const f = objective === 'sin' ? Math.sin : (x) => x * x * x - 2 * x * x + 2;
  const xs = trace.map((p) => p[0]);
  let lo = Math.min(...xs), hi = Math.max(...xs);
  const pad = Math.max((hi - lo) * 0.2, 1);
  lo -= pad; hi += pad;
  const curve = Array.from({ length: 200 }, (_, i) => lo + ((hi - lo) * i) / 199);
  const ys = curve.map(f).concat(trace.map((p) => p[1]));
  const ylo = Math.min(...ys), yhi = Math.max(...ys);
  const px = (x) => ((x - lo) / (hi - lo)) * (c.width - 20) + 10;
  const py = (y) => c.height - 10 - ((y - ylo) / (yhi - ylo || 1)) * (c.height - 20);
  g.clearRect(0, 0, c.width, c.height);
  g.strokeStyle = '#888';
  g.beginPath();
  curve.forEach((x, i) => (i ? g.lineTo(px(x), py(f(x))) : g.moveTo(px(x), py(f(x)))));
  g.stroke();
  g.fillStyle = '#c62828';
  for (const [x, y] of trace) g.fillRect(px(x) - 2, py(y) - 2, 4, 4);
}

function descend() {
  const out = $('gd-out');
  const objective = $('objective').value;
  const { ok, err } = call(gd_trace, objective, Number($('x0').value), Number($('step').value));
  if (err) return showError(out, err);
  out.className = ok.converged ? 'ok' : 'err';
  out.textContent = `argmin ≈ ${ok.x.toFixed(6)}, f = ${ok.fx.toFixed(6)} after ${ok.iterations} iterations` +
    (ok.converged ? '' : ' (iteration budget exhausted)');
  plot(objective, ok.trace);
}

await init();
$('src').value = example_program();
$('check').onclick = check;
$('run').onclick = run;
$('descend').onclick = descend;
$('objective').onchange = () => { $('x0').value = $('objective').value === 'sin' ? 5 : 4; };
check();
descend();
