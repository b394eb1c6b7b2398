import init, { convert, smatch, validate, ontologySource } from "./pkg/dmr_demo.js";

const $ = (id) => document.getElementById(id);

function show(target, fn) {
  try {
    $(target).textContent = JSON.stringify(JSON.parse(fn()), null, 2);
  } catch (e) {
    $(target).textContent = `error: ${e.message ?? e}`;
  }
}

await init();
$("ontology").value = ontologySource();

$("convert-run").onclick = () => show("convert-out", () => convert($("convert-in").value));
$("smatch-run").onclick = () =>
  show("smatch-out", () => smatch($("gold").value, $("pred").value, $("refer").checked));
$("validate-run").onclick = () =>
  show("validate-out", () => validate($("graph").value, $("utterance").value, $("ontology").value));
