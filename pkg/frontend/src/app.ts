/**
 * Two-list click-study page.
 *
 * Renders the session served by the local client node as two columns of five
 * thumbnails (left: raw ranking, right: re-ranked), records at most one click
 * per tile through the loopback API, and closes the session on finish. The
 * page talks to exactly three relative endpoints on its own origin and
 * nothing else.
 */

export interface DisplayEntry {
  item_id: number;
  title: string;
  image_url: string;
  position: number; // 1-based
}

export interface SessionPayload {
  participant_id: string;
  variant: string;
  timestamp: string;
  closed: boolean;
  clicks: number;
  list_a: DisplayEntry[];
  list_b: DisplayEntry[];
}

export const ENDPOINTS = {
  session: "/session/current",
  click: "/session/click",
  close: "/session/close",
} as const;

// Neutral headers: naming one column "diverse" would bias clicks toward it.
const COLUMN_HEADERS: Record<SourceList, string> = {
  A: "Recommendations 1",
  B: "Recommendations 2",
};

export type SourceList = "A" | "B";

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function statusArea(root: HTMLElement): HTMLElement {
  let area = root.querySelector<HTMLElement>(".status");
  if (!area) {
    area = el("p", "status");
    root.appendChild(area);
  }
  return area;
}

export function setStatus(root: HTMLElement, message: string): void {
  statusArea(root).textContent = message;
}

function renderError(root: HTMLElement, message: string): void {
  root.replaceChildren();
  const box = el("div", "error");
  box.appendChild(el("h1", undefined, "Session unavailable"));
  box.appendChild(el("p", undefined, message));
  root.appendChild(box);
}

function makeTile(root: HTMLElement, entry: DisplayEntry, list: SourceList): HTMLButtonElement {
  const tile = el("button", "tile");
  tile.type = "button";
  tile.dataset.list = list;
  tile.dataset.item = String(entry.item_id);
  tile.dataset.position = String(entry.position);
  if (entry.image_url) {
    const img = el("img");
    img.src = entry.image_url;
    img.alt = entry.title;
    tile.appendChild(img);
  } else {
    // no artwork: a titled placeholder stands in for the thumbnail
    tile.appendChild(el("div", "placeholder", entry.title));
  }
  tile.appendChild(el("span", "tile-title", entry.title));
  tile.addEventListener("click", () => void sendClick(root, tile));
  return tile;
}

function makeColumn(root: HTMLElement, list: SourceList, entries: DisplayEntry[]): HTMLElement {
  const column = el("section", "column");
  column.dataset.list = list;
  column.appendChild(el("h2", undefined, COLUMN_HEADERS[list]));
  for (const entry of [...entries].sort((a, b) => a.position - b.position)) {
    column.appendChild(makeTile(root, entry, list));
  }
  return column;
}

export function renderSession(root: HTMLElement, payload: SessionPayload): void {
  if (!payload.list_a?.length || !payload.list_b?.length) {
    renderError(root, "This session has no recommendation lists yet. Rerun the client round and reload this page.");
    return;
  }
  root.replaceChildren();
  delete root.dataset.finished;

  root.appendChild(el("h1", undefined, "Which of these would you watch?"));
  root.appendChild(el("p", "instructions", "Click every show you would be likely to watch, then press Finish."));

  const columns = el("div", "columns");
  columns.appendChild(makeColumn(root, "A", payload.list_a));
  columns.appendChild(makeColumn(root, "B", payload.list_b));
  root.appendChild(columns);

  const finish = el("button", "finish", "Finish");
  finish.type = "button";
  finish.addEventListener("click", () => void finishStudy(root));
  root.appendChild(finish);
  root.appendChild(el("p", "status"));

  if (payload.closed) {
    markFinished(root, payload.clicks, "This session is already submitted. Thanks!");
  }
}

export async function sendClick(root: HTMLElement, tile: HTMLButtonElement): Promise<void> {
  if (root.dataset.finished === "true") return;
  if (tile.classList.contains("clicked") || tile.classList.contains("pending")) return;

  tile.classList.add("pending", "clicked"); // optimistic mark, reverted on failure
  const body = {
    item_id: Number(tile.dataset.item),
    source_list: tile.dataset.list as SourceList,
    position: Number(tile.dataset.position),
    click_time: new Date().toISOString(),
  };
  try {
    const resp = await fetch(ENDPOINTS.click, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    });
    if (!resp.ok) {
      tile.classList.remove("clicked");
      setStatus(root, "That click was not accepted. Please retry.");
      return;
    }
    setStatus(root, "");
  } catch {
    tile.classList.remove("clicked");
    setStatus(root, "Could not reach the study client. Please retry.");
  } finally {
    tile.classList.remove("pending");
  }
}

function markFinished(root: HTMLElement, clicks: number, message: string): void {
  root.dataset.finished = "true";
  root.querySelectorAll<HTMLButtonElement>("button").forEach((b) => {
    b.disabled = true;
  });
  setStatus(root, `${message} (${clicks} click${clicks === 1 ? "" : "s"} recorded)`);
}

export async function finishStudy(root: HTMLElement): Promise<void> {
  if (root.dataset.finished === "true") return; // finishing twice is a no-op
  try {
    const resp = await fetch(ENDPOINTS.close, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: "{}",
    });
    if (!resp.ok) {
      setStatus(root, "Could not submit the session; your clicks are retained locally for retry.");
      return;
    }
    const result = (await resp.json()) as { clicks: number; submitted: boolean };
    const note = result.submitted
      ? "Your clicks were submitted. Thanks for participating!"
      : "Session closed; your clicks are retained locally and will be retried.";
    markFinished(root, result.clicks, note);
  } catch {
    setStatus(root, "Could not submit the session; your clicks are retained locally for retry.");
  }
}

export async function initApp(root: HTMLElement): Promise<void> {
  try {
    const resp = await fetch(ENDPOINTS.session);
    if (!resp.ok) {
      renderError(root, "No active session was found. Rerun the client round and reload this page.");
      return;
    }
    renderSession(root, (await resp.json()) as SessionPayload);
  } catch {
    renderError(root, "The study client is not reachable on this machine.");
  }
}
