/** Application wiring: two fragment panes, pick flow, register and merge. */

import { ApiError, PickerApi, type FragmentInfo } from "./api.js";
import { MIN_PAIRS, MIN_PAIRS_RULE, PickSession, type Pick } from "./session.js";
import { ViewerPane } from "./viewer.js";

const api = new PickerApi("");

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

const banner = el<HTMLDivElement>("banner");
const statusLine = el<HTMLDivElement>("status");
const registerBtn = el<HTMLButtonElement>("register");
const undoBtn = el<HTMLButtonElement>("undo");
const acceptBtn = el<HTMLButtonElement>("accept");
const reopenBtn = el<HTMLButtonElement>("reopen");
const resultBox = el<HTMLDivElement>("result");
const srcLabel = el<HTMLDivElement>("src-label");
const dstLabel = el<HTMLDivElement>("dst-label");

let session: PickSession | null = null;
let srcPane: ViewerPane;
let dstPane: ViewerPane;
let overlayPane: ViewerPane | null = null;
let busy = false;

function showError(message: string) {
  banner.textContent = message;
  banner.classList.add("visible", "error");
}

function showHint(message: string) {
  banner.textContent = message;
  banner.classList.remove("error");
  banner.classList.add("visible");
  setTimeout(() => banner.classList.remove("visible"), 2500);
}

function setBusy(value: boolean) {
  busy = value;
  refreshControls();
}

function refreshControls() {
  if (!session) return;
  const complete = session.completePairs;
  statusLine.textContent =
    `state: ${session.state} | pairs: ${complete} | next pick: ` +
    `${session.expecting === "src" ? "left (source)" : "right (target)"}`;
  registerBtn.disabled = busy || !session.canRegister;
  registerBtn.title = session.canRegister ? "" :
    `${MIN_PAIRS_RULE} (${complete}/${MIN_PAIRS} pairs)`;
  undoBtn.disabled = busy || session.state !== "picking";
  acceptBtn.disabled = busy || session.state !== "registered";
  reopenBtn.disabled = busy || session.state !== "registered";
  const srcPicks = session.allPairs().map((p) => p.src);
  const dstPicks = session.allPairs().flatMap((p) => (p.dst ? [p.dst] : []));
  srcPane.showMarkers(srcPicks);
  dstPane.showMarkers(dstPicks);
}

function handlePick(pane: "src" | "dst", pick: Pick) {
  if (!session) return;
  const res = session.addPick(pane, pick);
  if (!res.ok) {
    showHint(res.reason ?? "pick rejected");
    return;
  }
  refreshControls();
}

async function onRegister() {
  if (!session || !session.canRegister) return;
  setBusy(true);
  try {
    await api.postCorrespondences(session.toCorrespondencePayload());
    const reg = await api.register(session.sourceId, session.targetId);
    session.setRegistered({
      transform: reg.transform,
      rmse: reg.rmse,
      iterations: reg.iterations,
      converged: reg.converged,
      trace: reg.trace,
    });
    await showOverlay(reg.transform);
    resultBox.textContent =
      `registered: rmse=${reg.rmse} over ${reg.iterations} iterations ` +
      `(converged=${reg.converged})\ntrace: ${reg.trace.map((v) => v.toExponential(3)).join(", ")}`;
  } catch (err) {
    showError(err instanceof ApiError ? err.message : String(err));
  } finally {
    setBusy(false);
  }
}

async function showOverlay(transform: number[]) {
  if (!session) return;
  const canvas = el<HTMLCanvasElement>("overlay-canvas");
  el<HTMLDivElement>("overlay-wrap").classList.add("visible");
  overlayPane = overlayPane ?? new ViewerPane(canvas);
  const dstMesh = await api.fetchMesh(session.targetId);
  const srcMesh = await api.fetchMesh(session.sourceId);
  overlayPane.setMesh(dstMesh);
  overlayPane.addOverlayMesh(srcMesh, transform, 0x7fd0ff);
}

async function onAccept() {
  if (!session || session.state !== "registered") return;
  setBusy(true);
  try {
    const { mesh_id } = await api.merge();
    session.setMerged(mesh_id);
    const merged = await api.fetchResult(mesh_id);
    if (overlayPane) {
      overlayPane.setMesh(merged);
    }
    resultBox.textContent += `\nmerged mesh ${mesh_id}: ` +
      `${merged.vertexCount} vertices, ${merged.faceCount} faces ` +
      `(GET /api/result/${mesh_id})`;
  } catch (err) {
    showError(err instanceof ApiError ? err.message : String(err));
  } finally {
    setBusy(false);
  }
}

function onReopen() {
  if (!session) return;
  session.reopen();
  el<HTMLDivElement>("overlay-wrap").classList.remove("visible");
  refreshControls();
}

async function boot() {
  let fragments: FragmentInfo[];
  try {
    fragments = await api.listFragments();
  } catch (err) {
    showError(`service unreachable: ${err instanceof Error ? err.message : err}`);
    return;
  }
  if (fragments.length === 0) {
    showError("no fragments available; run the mesh and scale stages first");
    return;
  }
  if (fragments.length < 2) {
    showError(`only one fragment (${fragments[0].id}); nothing to register`);
    return;
  }
  const [dst, src] = fragments; // first fragment is the merge target frame
  session = new PickSession(src.id, dst.id);
  srcLabel.textContent = `source: ${src.id} (${src.vertices} vertices, ${src.faces} faces)`;
  dstLabel.textContent = `target: ${dst.id} (${dst.vertices} vertices, ${dst.faces} faces)`;

  srcPane = new ViewerPane(el<HTMLCanvasElement>("src-canvas"));
  dstPane = new ViewerPane(el<HTMLCanvasElement>("dst-canvas"));
  const missHint = () => showHint("click landed off the mesh; pick list unchanged");
  srcPane.setPickHandler((p) => handlePick("src", p), missHint);
  dstPane.setPickHandler((p) => handlePick("dst", p), missHint);

  try {
    srcPane.setMesh(await api.fetchMesh(src.id));
  } catch (err) {
    showError(`failed to load ${src.id}: ${err instanceof Error ? err.message : err}`);
  }
  try {
    dstPane.setMesh(await api.fetchMesh(dst.id));
  } catch (err) {
    showError(`failed to load ${dst.id}: ${err instanceof Error ? err.message : err}`);
  }

  registerBtn.addEventListener("click", onRegister);
  acceptBtn.addEventListener("click", onAccept);
  reopenBtn.addEventListener("click", onReopen);
  undoBtn.addEventListener("click", () => {
    session?.undo();
    refreshControls();
  });
  refreshControls();
}

boot();
