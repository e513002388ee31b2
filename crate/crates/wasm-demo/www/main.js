import init, { concepts, slate, prompt, neighbourhood } from "./pkg/ontoplace_wasm_demo.js";

const $ = (id) => document.getElementById(id);

function request() {
  return JSON.stringify({ mention: $("mention").value, method: $("method").value, k: Number($("k").value) });
}

function fail(target, e) {
  target.innerHTML = "";
  const p = document.createElement("p");
  p.className = "err";
  p.textContent = String(e);
  target.append(p);
}

function table(rows, picked = new Set()) {
  const t = document.createElement("table");
  t.innerHTML = "<tr><th>#</th><th>edge</th><th>score</th><th>from</th></tr>";
  rows.forEach((r, i) => {
    const tr = t.insertRow();
    if (picked.has(i)) tr.className = "picked";
    tr.insertCell().textContent = i;
    tr.insertCell().textContent = r.text;
    const s = tr.insertCell();
    s.className = "num";
    s.textContent = r.score.toFixed(3);
    tr.insertCell().textContent = r.origin;
  });
  return t;
}

function showSlate(picked) {
  const out = $("slate-out");
  try {
    const s = JSON.parse(slate(request()));
    out.replaceChildren(table(s.edges, picked));
  } catch (e) {
    fail(out, e);
  }
}

function showPrompt() {
  const pre = $("prompt-out");
  try {
    const p = JSON.parse(prompt(request()));
    showSlate(new Set(p.selected));
    pre.textContent = p.prompt + p.answer;
    pre.hidden = false;
  } catch (e) {
    fail($("slate-out"), e);
    pre.hidden = true;
  }
}

function list(title, items) {
  const div = document.createElement("div");
  const h = document.createElement("h4");
  h.textContent = `${title} (${items.length})`;
  const ul = document.createElement("ul");
  for (const it of items) {
    const li = document.createElement("li");
    li.textContent = it;
    ul.append(li);
  }
  div.append(h, ul);
  return div;
}

function showHood() {
  const out = $("hood-out");
  try {
    const n = JSON.parse(neighbourhood($("concept").value));
    out.replaceChildren(
      list("parents", n.parents),
      list("children", n.children),
      list("formed edges", n.formed),
      list("added by enrichment", n.enriched),
    );
  } catch (e) {
    fail(out, e);
  }
}

await init();
for (const c of JSON.parse(concepts())) {
  $("concept").add(new Option(`${c.id}  ${c.label}`, c.id));
}
$("run-slate").onclick = () => { $("prompt-out").hidden = true; showSlate(); };
$("run-prompt").onclick = showPrompt;
$("mention").onkeydown = (e) => { if (e.key === "Enter") $("run-slate").click(); };
$("concept").onchange = showHood;
showSlate();
showHood();
