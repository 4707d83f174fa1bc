# -*- coding: utf-8 -*-
"""
Image-to-image diffusion backends. A backend encodes the conditioning image, noises it according to the strength,
denoises it under the prompt and decodes the result, all in one generate call.
"""
import hashlib
import logging

import numpy as np

from logic.conditioning import as_image
from logic.errors import GenerationError

logger = logging.getLogger(__name__)

BIT_EXACT = 'bit-exact'
STATISTICAL = 'statistical'


def derive_seed(*parts):
    """Stable 63-bit seed from any printable parts."""
    key = "\x00".join(str(p) for p in parts).encode('utf-8')
    return int.from_bytes(hashlib.sha256(key).digest()[:8], 'little') >> 1


class Backend:
    """
    Parent class for image-to-image generation backends.
    Subclasses declare their pixel granularity, determinism level, the error bound of their encode/decode round trip
    and how many requests they accept at once.
    """
    backend_id = None
    granularity = 8
    determinism = STATISTICAL
    roundtrip_error = None
    max_concurrency = 1

    def generate(self, init, prompt, strength, scale, steps, seed, latent_noise=0.0):
        """
        @param init: conditioning image (H x W x 3 uint8), sides multiples of the granularity
        @param prompt: prompt text
        @param strength: fraction of noising applied to the encoded image, in [0, 1]
        @param scale: text guidance weight
        @param steps: denoising steps
        @param seed: seed of every random draw of the call
        @param latent_noise: amplitude of the seeded noise added to the encoded latent before denoising, relative to
            the latent's standard deviation
        @return: generated image with the size of init
        """
        raise NotImplementedError("Backend subclass must implement 'generate' method.")

    @property
    def supports_token_training(self):
        return False

    @property
    def supports_similarity(self):
        return False

    def train_token(self, images, class_word, token, steps, seed):
        raise GenerationError("backend {} cannot learn textual inversion tokens".format(self.backend_id))

    def register_token(self, token, handle):
        raise GenerationError("backend {} cannot use learned tokens".format(self.backend_id))

    def image_text_similarity(self, image, text):
        raise GenerationError("backend {} cannot score image-text similarity".format(self.backend_id))


class MockBackend(Backend):
    """
    Deterministic stand-in without model weights: the output is (1 - strength) * init + strength * noise, where the
    noise is a procedural image keyed by the prompt and the seed. Zero strength returns the init image exactly.
    """
    backend_id = 'mock'
    determinism = BIT_EXACT
    roundtrip_error = 0
    max_concurrency = 4

    def __init__(self, granularity=8):
        self.granularity = granularity
        self.tokens = {}

    def generate(self, init, prompt, strength, scale, steps, seed, latent_noise=0.0):
        init = as_image(init)
        latent = init.astype(np.float64)
        if latent_noise > 0:
            rng = np.random.default_rng(derive_seed('latent', seed))
            latent = latent + rng.normal(0.0, latent_noise * max(latent.std(), 1.0), size=latent.shape)
        noise = np.random.default_rng(derive_seed(prompt, seed)).integers(0, 256, size=init.shape)
        mixed = (1.0 - strength) * latent + strength * noise
        return np.clip(np.rint(mixed), 0, 255).astype(np.uint8)

    @property
    def supports_token_training(self):
        return True

    @property
    def supports_similarity(self):
        return True

    def train_token(self, images, class_word, token, steps, seed):
        # the mean colour of the training images stands in for an embedding
        if not images:
            raise GenerationError("no images to learn token {} from".format(token))
        means = np.mean([as_image(i).reshape(-1, 3).mean(axis=0) for i in images], axis=0)
        return [round(float(v), 6) for v in means]

    def register_token(self, token, handle):
        self.tokens[token] = handle

    def image_text_similarity(self, image, text):
        luminance = as_image(image).mean() / 255.0
        target = derive_seed('similarity', text) % 1000 / 999.0
        return float(1.0 - abs(luminance - target))


class DiffusersBackend(Backend):
    """
    Stable Diffusion img2img through diffusers. Textual inversion tokens are added to the pipeline's tokenizer and
    text encoder; similarity is the CLIP image-text cosine, clipped to [0, 1].
    Needs the packages of requirements-models.txt.
    """
    backend_id = 'stable-diffusion-v1-4'
    determinism = STATISTICAL
    max_concurrency = 1

    def __init__(self, model_id='CompVis/stable-diffusion-v1-4', clip_model_id='openai/clip-vit-base-patch32',
                 device=None, token_learning_rate=5e-4):
        try:
            import torch
            from diffusers import StableDiffusionImg2ImgPipeline
        except ImportError as e:
            raise GenerationError("backend {} needs torch and diffusers ({})".format(self.backend_id, e)) from None
        self.torch = torch
        self.device = device or ('cuda' if torch.cuda.is_available() else 'cpu')
        dtype = torch.float16 if self.device == 'cuda' else torch.float32
        try:
            self.pipe = StableDiffusionImg2ImgPipeline.from_pretrained(model_id, torch_dtype=dtype).to(self.device)
        except Exception as e:
            raise GenerationError("cannot load {}: {}".format(model_id, e)) from e
        self.pipe.set_progress_bar_config(disable=True)
        self.clip_model_id = clip_model_id
        self.token_learning_rate = token_learning_rate
        self._clip = None
        self.tokens = {}

    @property
    def supports_token_training(self):
        return True

    @property
    def supports_similarity(self):
        return True

    def _to_pil(self, image):
        from PIL import Image
        return Image.fromarray(as_image(image))

    def _encode(self, image):
        torch = self.torch
        vae = self.pipe.vae
        pixels = torch.from_numpy(as_image(image).astype(np.float32) / 127.5 - 1.0).permute(2, 0, 1)[None]
        pixels = pixels.to(self.device, dtype=vae.dtype)
        with torch.no_grad():
            return vae.encode(pixels).latent_dist.mean * vae.config.scaling_factor

    def generate(self, init, prompt, strength, scale, steps, seed, latent_noise=0.0):
        init = as_image(init)
        if strength == 0 and latent_noise == 0:
            return init.copy()
        torch = self.torch
        generator = torch.Generator(device=self.device).manual_seed(int(seed))
        image = self._to_pil(init)
        if latent_noise > 0:
            # a 4-channel tensor is taken by the pipeline as already encoded latents
            latents = self._encode(init)
            noise_generator = torch.Generator(device=self.device).manual_seed(derive_seed('latent', seed) % 2 ** 32)
            noise = torch.randn(latents.shape, generator=noise_generator, device=self.device, dtype=latents.dtype)
            image = latents + latent_noise * latents.std() * noise
        try:
            result = self.pipe(prompt=prompt, image=image, strength=max(strength, 1.0 / steps),
                               guidance_scale=scale, num_inference_steps=steps, generator=generator).images[0]
        except Exception as e:
            raise GenerationError("img2img failed for prompt '{}': {}".format(prompt, e)) from e
        height, width = init.shape[:2]
        if result.size != (width, height):
            result = result.resize((width, height))
        return as_image(np.array(result))

    def register_token(self, token, handle):
        torch = self.torch
        tokenizer, text_encoder = self.pipe.tokenizer, self.pipe.text_encoder
        if tokenizer.convert_tokens_to_ids(token) == tokenizer.unk_token_id:
            tokenizer.add_tokens([token])
            text_encoder.resize_token_embeddings(len(tokenizer))
        token_id = tokenizer.convert_tokens_to_ids(token)
        with torch.no_grad():
            text_encoder.get_input_embeddings().weight[token_id] = torch.tensor(
                handle, dtype=text_encoder.dtype, device=self.device)
        self.tokens[token] = handle

    def train_token(self, images, class_word, token, steps, seed):
        """
        Learn one pseudo-token embedding: the embedding is initialised from the class word and is the only trained
        parameter; the loss is the usual noise-prediction MSE on "a photo of a <token>".
        """
        torch = self.torch
        import torch.nn.functional as F
        from diffusers import DDPMScheduler

        if not images:
            raise GenerationError("no images to learn token {} from".format(token))
        torch.manual_seed(int(seed) % 2 ** 32)
        pipe = self.pipe
        tokenizer, text_encoder, unet, vae = pipe.tokenizer, pipe.text_encoder, pipe.unet, pipe.vae
        scheduler = DDPMScheduler.from_config(pipe.scheduler.config)

        init_ids = tokenizer.encode(class_word, add_special_tokens=False)
        self.register_token(token, text_encoder.get_input_embeddings().weight[init_ids].mean(dim=0).tolist())
        token_id = tokenizer.convert_tokens_to_ids(token)

        embeddings = text_encoder.get_input_embeddings()
        original = embeddings.weight.data.clone()
        keep = torch.ones(len(tokenizer), dtype=torch.bool)
        keep[token_id] = False
        unet.requires_grad_(False)
        vae.requires_grad_(False)
        text_encoder.requires_grad_(False)
        embeddings.weight.requires_grad_(True)
        optimizer = torch.optim.AdamW([embeddings.weight], lr=self.token_learning_rate)

        latents_pool = [self._encode(image) for image in images]
        input_ids = tokenizer(["a photo of a {}".format(token)], padding='max_length', truncation=True,
                              max_length=tokenizer.model_max_length, return_tensors='pt').input_ids.to(self.device)
        for step in range(steps):
            latents = latents_pool[step % len(latents_pool)]
            noise = torch.randn_like(latents)
            timesteps = torch.randint(0, scheduler.config.num_train_timesteps, (1,), device=self.device).long()
            noisy = scheduler.add_noise(latents, noise, timesteps)
            hidden = text_encoder(input_ids)[0]
            prediction = unet(noisy, timesteps, hidden).sample
            loss = F.mse_loss(prediction.float(), noise.float(), reduction='mean')
            loss.backward()
            optimizer.step()
            optimizer.zero_grad()
            with torch.no_grad():
                embeddings.weight[keep] = original[keep]
        embeddings.weight.requires_grad_(False)
        handle = embeddings.weight[token_id].detach().float().cpu().tolist()
        self.tokens[token] = handle
        logger.debug("Learned token %s from %d images in %d steps", token, len(images), steps)
        return handle

    def image_text_similarity(self, image, text):
        torch = self.torch
        if self._clip is None:
            from transformers import CLIPModel, CLIPProcessor
            self._clip = (CLIPModel.from_pretrained(self.clip_model_id).to(self.device),
                          CLIPProcessor.from_pretrained(self.clip_model_id))
        model, processor = self._clip
        inputs = processor(text=[text], images=self._to_pil(image), return_tensors='pt', padding=True).to(self.device)
        with torch.no_grad():
            image_features = model.get_image_features(pixel_values=inputs['pixel_values'])
            text_features = model.get_text_features(input_ids=inputs['input_ids'],
                                                    attention_mask=inputs['attention_mask'])
        cosine = torch.nn.functional.cosine_similarity(image_features, text_features).item()
        return float(min(max(cosine, 0.0), 1.0))


BACKEND_MAPPING = {
    'mock': MockBackend,
    'stable-diffusion-v1-4': DiffusersBackend,
}


def make_backend(backend_id, **kwargs):
    if backend_id not in BACKEND_MAPPING:
        raise GenerationError("unknown backend '{}' (available: {})".format(
            backend_id, ", ".join(BACKEND_MAPPING)))
    return BACKEND_MAPPING[backend_id](**kwargs)
