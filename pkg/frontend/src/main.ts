import { HttpReviewApi } from './api';
import { resolveShortcut } from './keyboard';
import { ReviewSession } from './session';

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function startSession(baseUrl: string, token: string, labeler: string, queue: string): void {
  const api = new HttpReviewApi(baseUrl, token);
  const session = new ReviewSession(api, labeler, { queue });

  const loginPane = el<HTMLDivElement>('login');
  const reviewPane = el<HTMLDivElement>('review');
  const image = el<HTMLImageElement>('item-image');
  const question = el<HTMLDivElement>('question');
  const meta = el<HTMLDivElement>('item-meta');
  const editor = el<HTMLTextAreaElement>('annotation');
  const notice = el<HTMLDivElement>('notice');
  const statsLine = el<HTMLDivElement>('stats');
  const bufferBadge = el<HTMLSpanElement>('buffer-badge');

  loginPane.hidden = true;
  reviewPane.hidden = false;

  let syncingEditor = false;
  session.onChange((state) => {
    const item = state.current;
    if (item) {
      image.src = item.image_ref;
      image.alt = item.question;
      question.textContent = item.question;
      meta.textContent = `${item.id} · v${item.version} · ${item.status}`;
    } else {
      image.removeAttribute('src');
      question.textContent = state.phase === 'empty' ? 'Queue is empty — nothing left to review.' : '';
      meta.textContent = '';
    }
    if (!syncingEditor && editor.value !== state.editBuffer) editor.value = state.editBuffer;
    notice.textContent = state.notice ?? '';
    notice.className = state.notice ? 'notice visible' : 'notice';

    const stats = state.stats;
    if (stats) {
      const done = stats.accepted + stats.corrected + stats.discarded;
      statsLine.textContent =
        `progress ${done}/${stats.total} · pending ${stats.pending} · you: ` +
        `${state.counts.accepted}A ${state.counts.corrected}C ${state.counts.discarded}D` +
        (state.statsStale ? ' · STALE' : '');
    }
    bufferBadge.hidden = state.buffered.length === 0;
    bufferBadge.textContent = `${state.buffered.length} buffered`;
    document.body.dataset.phase = state.phase;
  });

  editor.addEventListener('input', () => {
    syncingEditor = true;
    session.setEditBuffer(editor.value);
    syncingEditor = false;
  });

  el<HTMLButtonElement>('btn-accept').onclick = () => void session.accept();
  el<HTMLButtonElement>('btn-correct').onclick = () => void session.correct();
  el<HTMLButtonElement>('btn-discard').onclick = () => void session.discard();
  el<HTMLButtonElement>('btn-next').onclick = () => void session.claimNext();
  el<HTMLButtonElement>('btn-retry').onclick = () => void session.retryBuffered();

  image.addEventListener('click', () => image.classList.toggle('zoomed'));

  document.addEventListener('keydown', (event) => {
    const action = resolveShortcut(event);
    if (!action) return;
    event.preventDefault();
    if (action === 'accept') void session.accept();
    else if (action === 'correct') void session.correct();
    else if (action === 'discard') void session.discard();
    else if (action === 'next') void session.claimNext();
    else if (action === 'retry') void session.retryBuffered();
    else if (action === 'focus-editor') editor.focus();
  });

  window.setInterval(() => void session.refreshStats(), 5000);
  window.setInterval(() => {
    if (session.state.buffered.length > 0) void session.retryBuffered();
  }, 3000);

  void session.refreshStats();
  void session.claimNext();
}

function wireLogin(): void {
  const form = el<HTMLFormElement>('login-form');
  form.addEventListener('submit', (event) => {
    event.preventDefault();
    const baseUrl = el<HTMLInputElement>('server').value.replace(/\/$/, '');
    const token = el<HTMLInputElement>('token').value.trim();
    const labeler = el<HTMLInputElement>('labeler').value.trim();
    const queue = el<HTMLInputElement>('queue').value.trim() || 'ocr';
    if (!token || !labeler) return;
    startSession(baseUrl, token, labeler, queue);
  });
}

wireLogin();
