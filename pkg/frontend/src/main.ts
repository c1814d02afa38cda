// DOM wiring: render the queue state, forward keys and clicks. All
// scores and ranks shown here come verbatim from the server.

import { ApiClient } from "./api.js";
import { commandFor } from "./keyboard.js";
import { TriageQueue } from "./queue.js";

const api = new ApiClient();
const queue = new TriageQueue(api, { pageLimit: 1000, onChange: render });

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function formatScore(score: number): string {
  return score.toPrecision(6);
}

function render(): void {
  const config = queue.config;
  if (config) {
    const parts = [config.method, config.grouping];
    if (config.method === "embedding") parts.push(config.distance);
    if (config.normalized) parts.push("normalized");
    el("badges").textContent = parts.join(" · ");
  }
  el("version").textContent = queue.version ? `ranking v${queue.version}` : "";
  el("progress-text").textContent = `${queue.reviewed} / ${queue.total} reviewed`;
  const fraction = queue.total ? queue.reviewed / queue.total : 0;
  el("progress-fill").style.width = `${(fraction * 100).toFixed(1)}%`;

  const banner = el("banner");
  banner.hidden = !queue.banner;
  if (queue.banner) {
    el("banner-text").textContent =
      "The server is unreachable; your decisions are queued locally.";
  }
  const notice = el("notice");
  notice.hidden = queue.notice === null;
  notice.textContent = queue.notice ?? "";
  el("status").textContent = queue.errors.slice(-3).join(" — ");

  const entry = queue.focused();
  const image = el<HTMLImageElement>("candidate-image");
  const meta = el("candidate-meta");
  if (!entry) {
    image.removeAttribute("src");
    meta.textContent = "No candidates.";
    el("peer-strip").replaceChildren();
    return;
  }
  image.src = api.imageUrl(entry.image_id);
  image.alt = entry.image_id;

  const decision = queue.decisionOf(entry.image_id);
  meta.replaceChildren(
    line("rank", `#${entry.rank} of ${queue.total}`),
    line("image", entry.image_id),
    line("group", entry.group_key),
    line("score", formatScore(entry.score)),
    line("decision", decision ?? "undecided"),
  );
  meta.dataset.decision = decision ?? "none";

  const strip = el("peer-strip");
  strip.replaceChildren(
    ...queue.peers(8).map((peer) => {
      const cell = document.createElement("figure");
      const thumb = document.createElement("img");
      thumb.src = api.imageUrl(peer.image_id);
      thumb.alt = peer.image_id;
      thumb.loading = "lazy";
      const caption = document.createElement("figcaption");
      caption.textContent = peer.image_id;
      cell.append(thumb, caption);
      if (queue.decisionOf(peer.image_id) === "Remove") cell.className = "removed";
      return cell;
    }),
  );
}

function line(label: string, value: string): HTMLElement {
  const row = document.createElement("div");
  const key = document.createElement("span");
  key.className = "label";
  key.textContent = label;
  const val = document.createElement("span");
  val.textContent = value;
  row.append(key, val);
  return row;
}

function wire(): void {
  el("keep").addEventListener("click", () => queue.decide("Keep"));
  el("remove").addEventListener("click", () => queue.decide("Remove"));
  el("undo").addEventListener("click", () => queue.undo());
  el("next").addEventListener("click", () => queue.next());
  el("prev").addEventListener("click", () => queue.prev());
  el("retry").addEventListener("click", () => queue.retry());
  el("rerank").addEventListener("click", () => {
    void queue.rerankButton();
  });
  document.addEventListener("keydown", (event) => {
    const command = commandFor(event);
    if (!command) return;
    event.preventDefault();
    if (command === "keep") queue.decide("Keep");
    else if (command === "remove") queue.decide("Remove");
    else if (command === "undo") queue.undo();
    else if (command === "next") queue.next();
    else if (command === "prev") queue.prev();
  });
}

wire();
queue.init().catch((err) => {
  el("notice").hidden = false;
  el("notice").textContent = `could not reach the review service: ${String(err)}`;
});
