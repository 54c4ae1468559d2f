import { ApiClient } from './api.js';
import { ReviewApp } from './app.js';

const params = new URLSearchParams(window.location.search);
const base = params.get('api') ?? 'http://127.0.0.1:8008';
const caseId = params.get('case') ?? undefined;

const root = document.getElementById('app');
if (!root) throw new Error('missing #app mount point');

const app = new ReviewApp(root, new ApiClient(base));
void app.start(caseId).catch((err) => {
  app.showError(String(err));
});
